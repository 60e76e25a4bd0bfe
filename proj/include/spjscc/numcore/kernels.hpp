#pragma once

#include <cstddef>
#include <string_view>

namespace spjscc::numcore::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

// Hyper-parameters for one fused Adam update; bias corrections are
// 1 - beta^t, precomputed by the caller.
template <typename T>
struct AdamArgs {
  T lr;
  T beta1;
  T beta2;
  T eps;
  T bias_correction1;
  T bias_correction2;
};

// Inner loops shared by every layer. All matrices are row-major.
template <typename T>
struct KernelTable {
  Backend backend;
  // C[M,N] += A[M,K] * B[K,N]
  void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                   std::size_t lda, const T* b, std::size_t ldb, T* c,
                   std::size_t ldc);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  T (*dot)(std::size_t n, const T* x, const T* y);
  void (*adam_update)(std::size_t n, T* param, const T* grad, T* m, T* v,
                      const AdamArgs<T>& args);
};

template <typename T>
const KernelTable<T>& scalar_table();

// Null when the binary was built without AVX2 support.
template <typename T>
const KernelTable<T>* avx2_table();

// True when the running CPU reports AVX2 and FMA.
bool cpu_has_avx2();

// Backend chosen once per process: AVX2 when both compiled in and supported
// by the CPU, unless SPJSCC_KERNELS=scalar is set in the environment.
Backend active_backend();

template <typename T>
const KernelTable<T>& active_table();

}  // namespace spjscc::numcore::kernels
