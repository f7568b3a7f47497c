#pragma once

// Vectorized float primitives behind a runtime-dispatched function table.
// Every entry point has a scalar reference implementation; AVX2 and AVX-512
// variants are selected at startup from CPU capabilities, or forced via the
// VAST_KERNELS environment variable / select_backend(). The non-float
// templates below always use the scalar path, which keeps double-precision
// work (gradient checks, samplers) independent of the active backend.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace vast::kernels {

enum class Backend { scalar = 0, avx2 = 1, avx512 = 2 };

// Picks the widest backend compiled in and supported by the host, unless
// VAST_KERNELS names one explicitly. Called lazily by active_backend().
Backend resolve_backend();
Backend active_backend();
const char* backend_name(Backend b);

// name: "scalar" | "avx2" | "avx512" | "auto". Returns false (and leaves the
// table untouched) if the host or build cannot run the requested backend.
bool select_backend(std::string_view name);

struct KernelTable {
  float (*dot)(const float* a, const float* b, int n);
  void (*axpy)(int n, float alpha, const float* x, float* y);
  void (*scale)(int n, float alpha, float* x);
  void (*add)(int n, const float* a, const float* b, float* out);
  void (*mul)(int n, const float* a, const float* b, float* out);
  float (*reduce_sum)(const float* x, int n);
  float (*reduce_max)(const float* x, int n);
  void (*exp)(int n, const float* x, float* out);
  void (*tanh)(int n, const float* x, float* out);
  // Row-major matrix products. ld* are row strides. acc=false overwrites C,
  // acc=true accumulates into it.
  void (*gemm_nn)(int m, int n, int k, const float* a, int lda,
                  const float* b, int ldb, float* c, int ldc, bool acc);
  // C[m,n] = A[m,k] * B[n,k]^T
  void (*gemm_nt)(int m, int n, int k, const float* a, int lda,
                  const float* b, int ldb, float* c, int ldc, bool acc);
  // C[m,n] = A[k,m]^T * B[k,n]
  void (*gemm_tn)(int m, int n, int k, const float* a, int lda,
                  const float* b, int ldb, float* c, int ldc, bool acc);
};

// Table for the active backend (dispatch indirection point).
extern KernelTable table;
// Immutable per-variant tables, present only when compiled in (else nullptr).
const KernelTable* variant_table(Backend b);

// ---- scalar reference implementations, usable with any floating type ----

template <class T>
T dot_ref(const T* a, const T* b, int n) {
  T s = 0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy_ref(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale_ref(int n, T alpha, T* x) {
  for (int i = 0; i < n; ++i) x[i] *= alpha;
}

template <class T>
T reduce_sum_ref(const T* x, int n) {
  T s = 0;
  for (int i = 0; i < n; ++i) s += x[i];
  return s;
}

template <class T>
T reduce_max_ref(const T* x, int n) {
  T m = x[0];
  for (int i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

template <class T>
void gemm_nn_ref(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
                 T* c, int ldc, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * ldc;
    if (!acc)
      for (int j = 0; j < n; ++j) crow[j] = 0;
    for (int kk = 0; kk < k; ++kk) {
      const T av = a[static_cast<size_t>(i) * lda + kk];
      const T* brow = b + static_cast<size_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt_ref(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
                 T* c, int ldc, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * lda;
    T* crow = c + static_cast<size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      T s = dot_ref(arow, b + static_cast<size_t>(j) * ldb, k);
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

template <class T>
void gemm_tn_ref(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
                 T* c, int ldc, bool acc) {
  if (!acc)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * ldc + j] = 0;
  for (int kk = 0; kk < k; ++kk) {
    const T* arow = a + static_cast<size_t>(kk) * lda;
    const T* brow = b + static_cast<size_t>(kk) * ldb;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---- typed front doors: float goes through the dispatch table ----

template <class T>
T dot(const T* a, const T* b, int n) { return dot_ref(a, b, n); }
inline float dot(const float* a, const float* b, int n) { return table.dot(a, b, n); }

template <class T>
void axpy(int n, T alpha, const T* x, T* y) { axpy_ref(n, alpha, x, y); }
inline void axpy(int n, float alpha, const float* x, float* y) { table.axpy(n, alpha, x, y); }

template <class T>
void scale(int n, T alpha, T* x) { scale_ref(n, alpha, x); }
inline void scale(int n, float alpha, float* x) { table.scale(n, alpha, x); }

template <class T>
T reduce_sum(const T* x, int n) { return reduce_sum_ref(x, n); }
inline float reduce_sum(const float* x, int n) { return table.reduce_sum(x, n); }

template <class T>
T reduce_max(const T* x, int n) { return reduce_max_ref(x, n); }
inline float reduce_max(const float* x, int n) { return table.reduce_max(x, n); }

template <class T>
void vadd(int n, const T* a, const T* b, T* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
inline void vadd(int n, const float* a, const float* b, float* out) { table.add(n, a, b, out); }

template <class T>
void vmul(int n, const T* a, const T* b, T* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
inline void vmul(int n, const float* a, const float* b, float* out) { table.mul(n, a, b, out); }

template <class T>
void vexp(int n, const T* x, T* out) {
  for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}
inline void vexp(int n, const float* x, float* out) { table.exp(n, x, out); }

template <class T>
void vtanh(int n, const T* x, T* out) {
  for (int i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}
inline void vtanh(int n, const float* x, float* out) { table.tanh(n, x, out); }

template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool acc = false) {
  gemm_nn_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
inline void gemm_nn(int m, int n, int k, const float* a, int lda,
                    const float* b, int ldb, float* c, int ldc, bool acc = false) {
  table.gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}

template <class T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool acc = false) {
  gemm_nt_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
inline void gemm_nt(int m, int n, int k, const float* a, int lda,
                    const float* b, int ldb, float* c, int ldc, bool acc = false) {
  table.gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
}

template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
             T* c, int ldc, bool acc = false) {
  gemm_tn_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
inline void gemm_tn(int m, int n, int k, const float* a, int lda,
                    const float* b, int ldb, float* c, int ldc, bool acc = false) {
  table.gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
}

// In-place numerically stable softmax over one row.
template <class T>
void softmax_row(T* x, int n) {
  T mx = reduce_max(x, n);
  for (int i = 0; i < n; ++i) x[i] -= mx;
  vexp(n, x, x);
  T s = reduce_sum(x, n);
  scale(n, T(1) / s, x);
}

}  // namespace vast::kernels
