// Compiled with -mavx2 -mfma; only reached after the runtime CPU check.
#include <immintrin.h>

#include <cmath>

#include "spjscc/numcore/kernels.hpp"

namespace spjscc::numcore::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg zero() { return _mm256_setzero_ps(); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg zero() { return _mm256_setzero_pd(); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// 4 rows x 2 vectors of C held in registers across the whole k loop.
template <typename T>
void gemm_block_4x2(std::size_t k, const T* a, std::size_t lda, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  auto c00 = V::load(c), c01 = V::load(c + w);
  auto c10 = V::load(c + ldc), c11 = V::load(c + ldc + w);
  auto c20 = V::load(c + 2 * ldc), c21 = V::load(c + 2 * ldc + w);
  auto c30 = V::load(c + 3 * ldc), c31 = V::load(c + 3 * ldc + w);
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    const auto b0 = V::load(brow);
    const auto b1 = V::load(brow + w);
    auto a0 = V::set1(a[p]);
    c00 = V::fmadd(a0, b0, c00);
    c01 = V::fmadd(a0, b1, c01);
    auto a1 = V::set1(a[lda + p]);
    c10 = V::fmadd(a1, b0, c10);
    c11 = V::fmadd(a1, b1, c11);
    auto a2 = V::set1(a[2 * lda + p]);
    c20 = V::fmadd(a2, b0, c20);
    c21 = V::fmadd(a2, b1, c21);
    auto a3 = V::set1(a[3 * lda + p]);
    c30 = V::fmadd(a3, b0, c30);
    c31 = V::fmadd(a3, b1, c31);
  }
  V::store(c, c00);
  V::store(c + w, c01);
  V::store(c + ldc, c10);
  V::store(c + ldc + w, c11);
  V::store(c + 2 * ldc, c20);
  V::store(c + 2 * ldc + w, c21);
  V::store(c + 3 * ldc, c30);
  V::store(c + 3 * ldc + w, c31);
}

// One row of C, columns [j0, n).
template <typename T>
void gemm_row(std::size_t j0, std::size_t n, std::size_t k, const T* arow,
              const T* b, std::size_t ldb, T* crow) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  std::size_t j = j0;
  for (; j + w <= n; j += w) {
    auto acc = V::load(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      acc = V::fmadd(V::set1(arow[p]), V::load(b + p * ldb + j), acc);
    }
    V::store(crow + j, acc);
  }
  for (; j < n; ++j) {
    T acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * ldb + j], acc);
    crow[j] = acc;
  }
}

template <typename T>
void gemm_acc_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a,
                   std::size_t lda, const T* b, std::size_t ldb, T* c,
                   std::size_t ldc) {
  constexpr std::size_t nb = 2 * Vec<T>::width;
  const std::size_t n_main = n - n % nb;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n_main; j += nb) {
      gemm_block_4x2<T>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
    for (std::size_t r = 0; r < 4; ++r) {
      gemm_row<T>(n_main, n, k, a + (i + r) * lda, b, ldb, c + (i + r) * ldc);
    }
  }
  for (; i < m; ++i) gemm_row<T>(0, n, k, a + i * lda, b, ldb, c + i * ldc);
}

template <typename T>
void axpy_avx2(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
T dot_avx2(std::size_t n, const T* x, const T* y) {
  using V = Vec<T>;
  auto acc = V::zero();
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    acc = V::fmadd(V::load(x + i), V::load(y + i), acc);
  }
  T total = V::hsum(acc);
  for (; i < n; ++i) total = std::fma(x[i], y[i], total);
  return total;
}

template <typename T>
void adam_update_avx2(std::size_t n, T* param, const T* grad, T* m, T* v,
                      const AdamArgs<T>& args) {
  using V = Vec<T>;
  const auto b1 = V::set1(args.beta1), b2 = V::set1(args.beta2);
  const auto one_b1 = V::set1(T{1} - args.beta1);
  const auto one_b2 = V::set1(T{1} - args.beta2);
  const auto bc1 = V::set1(args.bias_correction1);
  const auto bc2 = V::set1(args.bias_correction2);
  const auto lr = V::set1(args.lr), eps = V::set1(args.eps);
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(one_b1, g));
    const auto vi =
        V::add(V::mul(b2, V::load(v + i)), V::mul(V::mul(one_b2, g), g));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto mhat = V::div(mi, bc1);
    const auto vhat = V::div(vi, bc2);
    const auto step = V::div(V::mul(lr, mhat), V::add(V::sqrt(vhat), eps));
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < n; ++i) {
    m[i] = args.beta1 * m[i] + (T{1} - args.beta1) * grad[i];
    v[i] = args.beta2 * v[i] + (T{1} - args.beta2) * grad[i] * grad[i];
    const T mhat = m[i] / args.bias_correction1;
    const T vhat = v[i] / args.bias_correction2;
    param[i] -= args.lr * mhat / (std::sqrt(vhat) + args.eps);
  }
}

}  // namespace

template <typename T>
const KernelTable<T>* avx2_table() {
  static const KernelTable<T> table{Backend::kAvx2, &gemm_acc_avx2<T>,
                                    &axpy_avx2<T>, &dot_avx2<T>,
                                    &adam_update_avx2<T>};
  return &table;
}

template const KernelTable<float>* avx2_table<float>();
template const KernelTable<double>* avx2_table<double>();

}  // namespace spjscc::numcore::kernels
