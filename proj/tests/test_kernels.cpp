// Scalar reference kernels vs. the AVX2 variants.

#include <random>
#include <vector>

#include "doctest.h"
#include "spjscc/numcore/kernels.hpp"

using namespace spjscc::numcore::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
void check_equivalence(double tol) {
  const KernelTable<T>* simd = avx2_table<T>();
  if (simd == nullptr || !cpu_has_avx2()) {
    MESSAGE("AVX2 kernels unavailable; equivalence not exercised");
    return;
  }
  const KernelTable<T>& ref = scalar_table<T>();
  std::mt19937_64 rng(42);
  // Odd sizes hit every tail path of the blocked kernel.
  struct Dims {
    std::size_t m, n, k;
  };
  for (auto [m, n, k] : std::vector<Dims>{{1, 1, 1}, {3, 7, 5}, {4, 16, 9}, {5, 17, 3},
                                          {9, 33, 27}, {32, 256, 288}, {13, 1024, 27}}) {
    auto a = random_vec<T>(m * k, rng), b = random_vec<T>(k * n, rng);
    auto c0 = random_vec<T>(m * n, rng);
    auto c1 = c0;
    ref.gemm_acc(m, n, k, a.data(), k, b.data(), n, c0.data(), n);
    simd->gemm_acc(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
    for (std::size_t i = 0; i < c0.size(); ++i) {
      REQUIRE(std::abs(static_cast<double>(c0[i] - c1[i])) <= tol * (1.0 + std::abs(static_cast<double>(c0[i]))) * static_cast<double>(k));
    }
  }
  for (std::size_t n : {1u, 7u, 8u, 31u, 1000u}) {
    auto x = random_vec<T>(n, rng), y0 = random_vec<T>(n, rng);
    auto y1 = y0;
    ref.axpy(n, T(0.37), x.data(), y0.data());
    simd->axpy(n, T(0.37), x.data(), y1.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(static_cast<double>(y0[i] - y1[i])) <= tol);
    const double d0 = ref.dot(n, x.data(), y0.data());
    const double d1 = simd->dot(n, x.data(), y0.data());
    CHECK(std::abs(d0 - d1) <= tol * static_cast<double>(n));

    auto p0 = random_vec<T>(n, rng), g = random_vec<T>(n, rng);
    auto p1 = p0;
    std::vector<T> m0(n, T(0.1)), v0(n, T(0.2)), m1 = m0, v1 = v0;
    const AdamArgs<T> args{T(1e-3), T(0.9), T(0.999), T(1e-8), T(0.19), T(0.002)};
    ref.adam_update(n, p0.data(), g.data(), m0.data(), v0.data(), args);
    simd->adam_update(n, p1.data(), g.data(), m1.data(), v1.data(), args);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(static_cast<double>(p0[i] - p1[i])) <= tol);
      CHECK(std::abs(static_cast<double>(m0[i] - m1[i])) <= tol);
      CHECK(std::abs(static_cast<double>(v0[i] - v1[i])) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("avx2 float kernels match the scalar reference") { check_equivalence<float>(1e-5); }

TEST_CASE("avx2 double kernels match the scalar reference") { check_equivalence<double>(1e-13); }

TEST_CASE("active backend is one of the compiled tables") {
  const auto b = active_backend();
  CHECK(active_table<float>().backend == b);
  if (b == Backend::kAvx2) CHECK(cpu_has_avx2());
  CHECK(!backend_name(b).empty());
}
