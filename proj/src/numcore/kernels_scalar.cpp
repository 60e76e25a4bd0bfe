#include <cmath>

#include "spjscc/numcore/kernels.hpp"

namespace spjscc::numcore::kernels {
namespace {

template <typename T>
void gemm_acc_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a,
                     std::size_t lda, const T* b, std::size_t ldb, T* c,
                     std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * lda + p];
      if (aip == T{0}) continue;
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void axpy_scalar(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot_scalar(std::size_t n, const T* x, const T* y) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void adam_update_scalar(std::size_t n, T* param, const T* grad, T* m, T* v,
                        const AdamArgs<T>& args) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = args.beta1 * m[i] + (T{1} - args.beta1) * grad[i];
    v[i] = args.beta2 * v[i] + (T{1} - args.beta2) * grad[i] * grad[i];
    const T mhat = m[i] / args.bias_correction1;
    const T vhat = v[i] / args.bias_correction2;
    param[i] -= args.lr * mhat / (std::sqrt(vhat) + args.eps);
  }
}

}  // namespace

template <typename T>
const KernelTable<T>& scalar_table() {
  static const KernelTable<T> table{Backend::kScalar, &gemm_acc_scalar<T>,
                                    &axpy_scalar<T>, &dot_scalar<T>,
                                    &adam_update_scalar<T>};
  return table;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace spjscc::numcore::kernels
