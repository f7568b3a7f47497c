#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "vast/kernels.hpp"
#include "vast/rng.hpp"

using namespace vast;
namespace k = vast::kernels;

namespace {

std::vector<float> random_vec(Rng& rng, int n, float lo = -2.0f, float hi = 2.0f) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Relative tolerance accounting for fma/reassociation differences.
void check_close(const std::vector<float>& got, const std::vector<float>& want,
                 float rel = 2e-5f, float abs = 1e-5f) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    const float tol = abs + rel * std::abs(want[i]);
    REQUIRE_MESSAGE(std::abs(got[i] - want[i]) <= tol,
                    "i=", i, " got=", got[i], " want=", want[i]);
  }
}

std::vector<k::Backend> simd_backends() {
  std::vector<k::Backend> out;
  for (k::Backend b : {k::Backend::avx2, k::Backend::avx512})
    if (k::variant_table(b) != nullptr && k::select_backend(k::backend_name(b)))
      out.push_back(b);
  k::select_backend("auto");
  return out;
}

}  // namespace

TEST_CASE("backend selection") {
  CHECK(k::select_backend("scalar"));
  CHECK(k::active_backend() == k::Backend::scalar);
  CHECK_FALSE(k::select_backend("not-a-backend"));
  CHECK(k::active_backend() == k::Backend::scalar);
  CHECK(k::select_backend("auto"));
  INFO("resolved backend: ", k::backend_name(k::active_backend()));
  CHECK(k::variant_table(k::active_backend()) != nullptr);
}

TEST_CASE("elementwise and reduction variants match scalar reference") {
  Rng rng(41);
  const auto* ref = k::variant_table(k::Backend::scalar);
  for (k::Backend b : simd_backends()) {
    const auto* tab = k::variant_table(b);
    for (int n : {1, 3, 7, 8, 9, 16, 31, 64, 257, 1000}) {
      auto a = random_vec(rng, n);
      auto c = random_vec(rng, n);

      CHECK(std::abs(tab->dot(a.data(), c.data(), n) - ref->dot(a.data(), c.data(), n)) <=
            1e-4f + 2e-5f * std::abs(ref->dot(a.data(), c.data(), n)));
      CHECK(std::abs(tab->reduce_sum(a.data(), n) - ref->reduce_sum(a.data(), n)) <=
            1e-4f + 2e-5f * std::abs(ref->reduce_sum(a.data(), n)));
      CHECK(tab->reduce_max(a.data(), n) == ref->reduce_max(a.data(), n));

      std::vector<float> got(n), want(n);
      tab->add(n, a.data(), c.data(), got.data());
      ref->add(n, a.data(), c.data(), want.data());
      check_close(got, want);

      tab->mul(n, a.data(), c.data(), got.data());
      ref->mul(n, a.data(), c.data(), want.data());
      check_close(got, want);

      got = a;
      want = a;
      tab->axpy(n, 0.37f, c.data(), got.data());
      ref->axpy(n, 0.37f, c.data(), want.data());
      check_close(got, want);

      got = a;
      want = a;
      tab->scale(n, -1.25f, got.data());
      ref->scale(n, -1.25f, want.data());
      check_close(got, want);
    }
  }
}

TEST_CASE("transcendental variants match scalar within polynomial tolerance") {
  Rng rng(42);
  const auto* ref = k::variant_table(k::Backend::scalar);
  for (k::Backend b : simd_backends()) {
    const auto* tab = k::variant_table(b);
    const int n = 4096;
    auto x = random_vec(rng, n, -10.0f, 10.0f);
    x[0] = 0.0f;
    x[1] = -95.0f;  // below the exp clamp
    x[2] = 85.0f;
    std::vector<float> got(n), want(n);

    tab->exp(n, x.data(), got.data());
    ref->exp(n, x.data(), want.data());
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(got[i] - want[i]) <= 1e-6f + 2e-6f * std::abs(want[i]));

    tab->tanh(n, x.data(), got.data());
    ref->tanh(n, x.data(), want.data());
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(got[i] - want[i]) <= 2e-6f + 2e-6f * std::abs(want[i]));
  }
}

TEST_CASE("gemm variants match scalar reference across shapes and strides") {
  Rng rng(43);
  const auto* ref = k::variant_table(k::Backend::scalar);
  struct Shape {
    int m, n, kk;
  };
  const Shape shapes[] = {{1, 1, 1},   {2, 3, 4},   {4, 16, 8},  {5, 17, 9},
                          {7, 31, 33}, {8, 64, 32}, {13, 40, 300}, {64, 48, 17}};
  for (k::Backend b : simd_backends()) {
    INFO("backend: ", k::backend_name(b));
    const auto* tab = k::variant_table(b);
    for (const auto& s : shapes) {
      // padded strides exercise the ld arguments
      const int lda = s.kk + 3, ldb = s.n + 2, ldc = s.n + 5;
      auto a = random_vec(rng, s.m * lda);
      auto bm = random_vec(rng, s.kk * ldb);
      auto c0 = random_vec(rng, s.m * ldc);

      for (bool acc : {false, true}) {
        auto got = c0, want = c0;
        tab->gemm_nn(s.m, s.n, s.kk, a.data(), lda, bm.data(), ldb, got.data(), ldc, acc);
        ref->gemm_nn(s.m, s.n, s.kk, a.data(), lda, bm.data(), ldb, want.data(), ldc, acc);
        check_close(got, want, 1e-4f, 1e-4f);
      }
      {
        auto bt = random_vec(rng, s.n * lda);  // B as [n,k] with stride lda
        auto got = c0, want = c0;
        tab->gemm_nt(s.m, s.n, s.kk, a.data(), lda, bt.data(), lda, got.data(), ldc, true);
        ref->gemm_nt(s.m, s.n, s.kk, a.data(), lda, bt.data(), lda, want.data(), ldc, true);
        check_close(got, want, 1e-4f, 1e-4f);
      }
      {
        auto at = random_vec(rng, s.kk * (s.m + 2));  // A as [k,m]
        auto got = c0, want = c0;
        tab->gemm_tn(s.m, s.n, s.kk, at.data(), s.m + 2, bm.data(), ldb, got.data(), ldc, true);
        ref->gemm_tn(s.m, s.n, s.kk, at.data(), s.m + 2, bm.data(), ldb, want.data(), ldc, true);
        check_close(got, want, 1e-4f, 1e-4f);
      }
    }
  }
}

TEST_CASE("gemm handles k=0 and empty dimensions") {
  std::vector<float> a(4, 1.0f), b(4, 1.0f), c(4, 7.0f);
  k::gemm_nn(2, 2, 0, a.data(), 2, b.data(), 2, c.data(), 2, false);
  for (float x : c) CHECK(x == 0.0f);
  c.assign(4, 7.0f);
  k::gemm_nn(2, 2, 0, a.data(), 2, b.data(), 2, c.data(), 2, true);
  for (float x : c) CHECK(x == 7.0f);
  k::gemm_nn(0, 2, 2, a.data(), 2, b.data(), 2, c.data(), 2, false);
}

TEST_CASE("gemm throughput report" * doctest::skip(false)) {
  // informative only: prints GF/s for the active backend
  const int m = 512, n = 512, kk = 512;
  Rng rng(44);
  auto a = random_vec(rng, m * kk);
  auto b = random_vec(rng, kk * n);
  std::vector<float> c(static_cast<size_t>(m) * n);
  k::gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, false);  // warm
  const auto t0 = std::chrono::steady_clock::now();
  const int reps = 8;
  for (int r = 0; r < reps; ++r)
    k::gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, false);
  const auto t1 = std::chrono::steady_clock::now();
  const double sec = std::chrono::duration<double>(t1 - t0).count();
  const double gflops = 2.0 * m * n * kk * reps / sec / 1e9;
  std::printf("[kernels] backend=%s gemm %dx%dx%d: %.1f GF/s\n",
              k::backend_name(k::active_backend()), m, n, kk, gflops);
  CHECK(c[0] == c[0]);  // finite
}
