#pragma once

// Shared helpers for kernel variant translation units.

#include <cstddef>
#include <vector>

namespace vast::kernels::detail {

// Cache-blocked out-of-place transpose: dst[j,i] = src[i,j].
// src is rows x cols with row stride lds; dst has row stride cols... callers
// pass a tight buffer, so dst stride == rows.
inline void transpose_blocked(const float* src, int rows, int cols, int lds,
                              float* dst) {
  constexpr int B = 32;
  for (int i0 = 0; i0 < rows; i0 += B) {
    const int i1 = i0 + B < rows ? i0 + B : rows;
    for (int j0 = 0; j0 < cols; j0 += B) {
      const int j1 = j0 + B < cols ? j0 + B : cols;
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          dst[static_cast<size_t>(j) * rows + i] =
              src[static_cast<size_t>(i) * lds + j];
    }
  }
}

}  // namespace vast::kernels::detail
