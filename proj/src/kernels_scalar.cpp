#include "vast/kernels.hpp"

namespace vast::kernels {

namespace {

float dot_f(const float* a, const float* b, int n) { return dot_ref(a, b, n); }
void axpy_f(int n, float alpha, const float* x, float* y) { axpy_ref(n, alpha, x, y); }
void scale_f(int n, float alpha, float* x) { scale_ref(n, alpha, x); }

void add_f(int n, const float* a, const float* b, float* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_f(int n, const float* a, const float* b, float* out) {
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

float reduce_sum_f(const float* x, int n) { return reduce_sum_ref(x, n); }
float reduce_max_f(const float* x, int n) { return reduce_max_ref(x, n); }

void exp_f(int n, const float* x, float* out) {
  for (int i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void tanh_f(int n, const float* x, float* out) {
  for (int i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

void gemm_nn_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  gemm_nn_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
void gemm_nt_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  gemm_nt_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}
void gemm_tn_f(int m, int n, int k, const float* a, int lda, const float* b,
               int ldb, float* c, int ldc, bool acc) {
  gemm_tn_ref(m, n, k, a, lda, b, ldb, c, ldc, acc);
}

}  // namespace

extern const KernelTable kScalarTable;
const KernelTable kScalarTable = {
    dot_f, axpy_f, scale_f, add_f,     mul_f,     reduce_sum_f, reduce_max_f,
    exp_f, tanh_f, gemm_nn_f, gemm_nt_f, gemm_tn_f,
};

}  // namespace vast::kernels
