#include <immintrin.h>

#include "kernels_common.hpp"
#include "vast/kernels.hpp"

// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma; only reachable when
// the dispatcher has confirmed host support.

namespace vast::kernels {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

float dot_f(const float* a, const float* b, int n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  int i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float s = hsum8(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f(int n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f(int n, float alpha, float* x) {
  const __m256 va = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void add_f(int n, const float* a, const float* b, float* out) {
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_f(int n, const float* a, const float* b, float* out) {
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

float reduce_sum_f(const float* x, int n) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum8(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float reduce_max_f(const float* x, int n) {
  int i = 0;
  float m = x[0];
  if (n >= 8) {
    __m256 vm = _mm256_loadu_ps(x);
    for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
    __m128 lo = _mm_max_ps(_mm256_castps256_ps128(vm), _mm256_extractf128_ps(vm, 1));
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 0x1));
    m = _mm_cvtss_f32(lo);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

// exp via 2^n * p(r), r = x - n*ln2, degree-5 polynomial. Max relative error
// vs std::expf is ~2e-7 over the clamped range.
inline __m256 exp8(__m256 x) {
  x = _mm256_min_ps(x, _mm256_set1_ps(88.3762626647949f));
  x = _mm256_max_ps(x, _mm256_set1_ps(-87.3365478515625f));
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f),
                              _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  __m256 z = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  z = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), z);
  const __m256 z2 = _mm256_mul_ps(z, z);
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_fmadd_ps(p, z, _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_fmadd_ps(p, z, _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_fmadd_ps(p, z, _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_fmadd_ps(p, z, _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_fmadd_ps(p, z, _mm256_set1_ps(5.0000001201e-1f));
  p = _mm256_fmadd_ps(p, z2, z);
  p = _mm256_add_ps(p, _mm256_set1_ps(1.0f));
  __m256i n = _mm256_cvtps_epi32(fx);
  n = _mm256_add_epi32(n, _mm256_set1_epi32(127));
  n = _mm256_slli_epi32(n, 23);
  return _mm256_mul_ps(p, _mm256_castsi256_ps(n));
}

void exp_f(int n, const float* x, float* out) {
  int i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, exp8(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

void tanh_f(int n, const float* x, float* out) {
  const __m256 one = _mm256_set1_ps(1.0f);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 e = exp8(_mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_set1_ps(2.0f)));
    __m256 t = _mm256_div_ps(_mm256_sub_ps(e, one), _mm256_add_ps(e, one));
    _mm256_storeu_ps(out + i, t);
  }
  for (; i < n; ++i) out[i] = std::tanh(x[i]);
}

// 4x16 register-tiled GEMM microkernel over one k chunk. first=true
// overwrites C, otherwise accumulates.
void gemm_nn_chunk(int m, int n, int k, const float* a, int lda,
                   const float* b, int ldb, float* c, int ldc, bool first) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + static_cast<size_t>(i) * lda;
    const float* a1 = a0 + lda;
    const float* a2 = a1 + lda;
    const float* a3 = a2 + lda;
    float* c0 = c + static_cast<size_t>(i) * ldc;
    float* c1 = c0 + ldc;
    float* c2 = c1 + ldc;
    float* c3 = c2 + ldc;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 q00, q01, q10, q11, q20, q21, q30, q31;
      if (first) {
        q00 = q01 = q10 = q11 = q20 = q21 = q30 = q31 = _mm256_setzero_ps();
      } else {
        q00 = _mm256_loadu_ps(c0 + j);
        q01 = _mm256_loadu_ps(c0 + j + 8);
        q10 = _mm256_loadu_ps(c1 + j);
        q11 = _mm256_loadu_ps(c1 + j + 8);
        q20 = _mm256_loadu_ps(c2 + j);
        q21 = _mm256_loadu_ps(c2 + j + 8);
        q30 = _mm256_loadu_ps(c3 + j);
        q31 = _mm256_loadu_ps(c3 + j + 8);
      }
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, brow += ldb) {
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 av = _mm256_set1_ps(a0[kk]);
        q00 = _mm256_fmadd_ps(av, b0, q00);
        q01 = _mm256_fmadd_ps(av, b1, q01);
        av = _mm256_set1_ps(a1[kk]);
        q10 = _mm256_fmadd_ps(av, b0, q10);
        q11 = _mm256_fmadd_ps(av, b1, q11);
        av = _mm256_set1_ps(a2[kk]);
        q20 = _mm256_fmadd_ps(av, b0, q20);
        q21 = _mm256_fmadd_ps(av, b1, q21);
        av = _mm256_set1_ps(a3[kk]);
        q30 = _mm256_fmadd_ps(av, b0, q30);
        q31 = _mm256_fmadd_ps(av, b1, q31);
      }
      _mm256_storeu_ps(c0 + j, q00);
      _mm256_storeu_ps(c0 + j + 8, q01);
      _mm256_storeu_ps(c1 + j, q10);
      _mm256_storeu_ps(c1 + j + 8, q11);
      _mm256_storeu_ps(c2 + j, q20);
      _mm256_storeu_ps(c2 + j + 8, q21);
      _mm256_storeu_ps(c3 + j, q30);
      _mm256_storeu_ps(c3 + j + 8, q31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 q0, q1, q2, q3;
      if (first) {
        q0 = q1 = q2 = q3 = _mm256_setzero_ps();
      } else {
        q0 = _mm256_loadu_ps(c0 + j);
        q1 = _mm256_loadu_ps(c1 + j);
        q2 = _mm256_loadu_ps(c2 + j);
        q3 = _mm256_loadu_ps(c3 + j);
      }
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, brow += ldb) {
        const __m256 b0 = _mm256_loadu_ps(brow);
        q0 = _mm256_fmadd_ps(_mm256_set1_ps(a0[kk]), b0, q0);
        q1 = _mm256_fmadd_ps(_mm256_set1_ps(a1[kk]), b0, q1);
        q2 = _mm256_fmadd_ps(_mm256_set1_ps(a2[kk]), b0, q2);
        q3 = _mm256_fmadd_ps(_mm256_set1_ps(a3[kk]), b0, q3);
      }
      _mm256_storeu_ps(c0 + j, q0);
      _mm256_storeu_ps(c1 + j, q1);
      _mm256_storeu_ps(c2 + j, q2);
      _mm256_storeu_ps(c3 + j, q3);
    }
    for (; j < n; ++j) {
      float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int kk = 0; kk < k; ++kk) {
        const float bv = b[static_cast<size_t>(kk) * ldb + j];
        s0 += a0[kk] * bv;
        s1 += a1[kk] * bv;
        s2 += a2[kk] * bv;
        s3 += a3[kk] * bv;
      }
      if (first) {
        c0[j] = s0; c1[j] = s1; c2[j] = s2; c3[j] = s3;
      } else {
        c0[j] += s0; c1[j] += s1; c2[j] += s2; c3[j] += s3;
      }
    }
  }
  for (; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * lda;
    float* crow = c + static_cast<size_t>(i) * ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 q = first ? _mm256_setzero_ps() : _mm256_loadu_ps(crow + j);
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, brow += ldb)
        q = _mm256_fmadd_ps(_mm256_set1_ps(arow[kk]), _mm256_loadu_ps(brow), q);
      _mm256_storeu_ps(crow + j, q);
    }
    for (; j < n; ++j) {
      float s = 0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * b[static_cast<size_t>(kk) * ldb + j];
      crow[j] = first ? s : crow[j] + s;
    }
  }
}

void gemm_nn_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!acc)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * ldc + j] = 0;
    return;
  }
  constexpr int KC = 256;  // keeps the live B panel within L1/L2
  for (int k0 = 0; k0 < k; k0 += KC) {
    const int kb = k - k0 < KC ? k - k0 : KC;
    gemm_nn_chunk(m, n, kb, a + k0, lda, b + static_cast<size_t>(k0) * ldb, ldb,
                  c, ldc, k0 == 0 && !acc);
  }
}

void gemm_nt_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  if (m <= 0 || n <= 0) return;
  std::vector<float> bt(static_cast<size_t>(k) * n);
  detail::transpose_blocked(b, n, k, ldb, bt.data());
  gemm_nn_f(m, n, k, a, lda, bt.data(), n, c, ldc, acc);
}

// Direct A^T walk: per k-row the four A scalars for an i-tile are adjacent,
// so no transpose buffer is needed (the buffer + copy dominated tall-skinny
// shapes like attention's dV/dK).
void gemm_tn_chunk(int m, int n, int k, const float* a, int lda,
                   const float* b, int ldb, float* c, int ldc, bool first) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    float* c0 = c + static_cast<size_t>(i) * ldc;
    float* c1 = c0 + ldc;
    float* c2 = c1 + ldc;
    float* c3 = c2 + ldc;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 q00, q01, q10, q11, q20, q21, q30, q31;
      if (first) {
        q00 = q01 = q10 = q11 = q20 = q21 = q30 = q31 = _mm256_setzero_ps();
      } else {
        q00 = _mm256_loadu_ps(c0 + j);
        q01 = _mm256_loadu_ps(c0 + j + 8);
        q10 = _mm256_loadu_ps(c1 + j);
        q11 = _mm256_loadu_ps(c1 + j + 8);
        q20 = _mm256_loadu_ps(c2 + j);
        q21 = _mm256_loadu_ps(c2 + j + 8);
        q30 = _mm256_loadu_ps(c3 + j);
        q31 = _mm256_loadu_ps(c3 + j + 8);
      }
      const float* acol = a + i;
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, acol += lda, brow += ldb) {
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 av = _mm256_set1_ps(acol[0]);
        q00 = _mm256_fmadd_ps(av, b0, q00);
        q01 = _mm256_fmadd_ps(av, b1, q01);
        av = _mm256_set1_ps(acol[1]);
        q10 = _mm256_fmadd_ps(av, b0, q10);
        q11 = _mm256_fmadd_ps(av, b1, q11);
        av = _mm256_set1_ps(acol[2]);
        q20 = _mm256_fmadd_ps(av, b0, q20);
        q21 = _mm256_fmadd_ps(av, b1, q21);
        av = _mm256_set1_ps(acol[3]);
        q30 = _mm256_fmadd_ps(av, b0, q30);
        q31 = _mm256_fmadd_ps(av, b1, q31);
      }
      _mm256_storeu_ps(c0 + j, q00);
      _mm256_storeu_ps(c0 + j + 8, q01);
      _mm256_storeu_ps(c1 + j, q10);
      _mm256_storeu_ps(c1 + j + 8, q11);
      _mm256_storeu_ps(c2 + j, q20);
      _mm256_storeu_ps(c2 + j + 8, q21);
      _mm256_storeu_ps(c3 + j, q30);
      _mm256_storeu_ps(c3 + j + 8, q31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 q0, q1, q2, q3;
      if (first) {
        q0 = q1 = q2 = q3 = _mm256_setzero_ps();
      } else {
        q0 = _mm256_loadu_ps(c0 + j);
        q1 = _mm256_loadu_ps(c1 + j);
        q2 = _mm256_loadu_ps(c2 + j);
        q3 = _mm256_loadu_ps(c3 + j);
      }
      const float* acol = a + i;
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, acol += lda, brow += ldb) {
        const __m256 b0 = _mm256_loadu_ps(brow);
        q0 = _mm256_fmadd_ps(_mm256_set1_ps(acol[0]), b0, q0);
        q1 = _mm256_fmadd_ps(_mm256_set1_ps(acol[1]), b0, q1);
        q2 = _mm256_fmadd_ps(_mm256_set1_ps(acol[2]), b0, q2);
        q3 = _mm256_fmadd_ps(_mm256_set1_ps(acol[3]), b0, q3);
      }
      _mm256_storeu_ps(c0 + j, q0);
      _mm256_storeu_ps(c1 + j, q1);
      _mm256_storeu_ps(c2 + j, q2);
      _mm256_storeu_ps(c3 + j, q3);
    }
    for (; j < n; ++j) {
      float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int kk = 0; kk < k; ++kk) {
        const float bv = b[static_cast<size_t>(kk) * ldb + j];
        const float* acol = a + static_cast<size_t>(kk) * lda + i;
        s0 += acol[0] * bv;
        s1 += acol[1] * bv;
        s2 += acol[2] * bv;
        s3 += acol[3] * bv;
      }
      if (first) {
        c0[j] = s0; c1[j] = s1; c2[j] = s2; c3[j] = s3;
      } else {
        c0[j] += s0; c1[j] += s1; c2[j] += s2; c3[j] += s3;
      }
    }
  }
  for (; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * ldc;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 q = first ? _mm256_setzero_ps() : _mm256_loadu_ps(crow + j);
      const float* acol = a + i;
      const float* brow = b + j;
      for (int kk = 0; kk < k; ++kk, acol += lda, brow += ldb)
        q = _mm256_fmadd_ps(_mm256_set1_ps(*acol), _mm256_loadu_ps(brow), q);
      _mm256_storeu_ps(crow + j, q);
    }
    for (; j < n; ++j) {
      float s = 0;
      for (int kk = 0; kk < k; ++kk)
        s += a[static_cast<size_t>(kk) * lda + i] * b[static_cast<size_t>(kk) * ldb + j];
      crow[j] = first ? s : crow[j] + s;
    }
  }
}

void gemm_tn_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!acc)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * ldc + j] = 0;
    return;
  }
  constexpr int KC = 256;
  for (int k0 = 0; k0 < k; k0 += KC) {
    const int kb = k - k0 < KC ? k - k0 : KC;
    gemm_tn_chunk(m, n, kb, a + static_cast<size_t>(k0) * lda, lda,
                  b + static_cast<size_t>(k0) * ldb, ldb, c, ldc, k0 == 0 && !acc);
  }
}

}  // namespace

extern const KernelTable kAvx2Table;
const KernelTable kAvx2Table = {
    dot_f, axpy_f, scale_f, add_f,     mul_f,     reduce_sum_f, reduce_max_f,
    exp_f, tanh_f, gemm_nn_f, gemm_nt_f, gemm_tn_f,
};

}  // namespace vast::kernels
