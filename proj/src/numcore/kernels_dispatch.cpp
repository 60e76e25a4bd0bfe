#include <cstdlib>
#include <string>

#include "spjscc/numcore/kernels.hpp"

namespace spjscc::numcore::kernels {

#ifndef SPJSCC_HAVE_AVX2
template <typename T>
const KernelTable<T>* avx2_table() {
  return nullptr;
}
template const KernelTable<float>* avx2_table<float>();
template const KernelTable<double>* avx2_table<double>();
#endif

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() {
  static const Backend chosen = [] {
    const char* env = std::getenv("SPJSCC_KERNELS");
    if (env != nullptr && std::string(env) == "scalar") return Backend::kScalar;
    if (avx2_table<float>() != nullptr && cpu_has_avx2()) return Backend::kAvx2;
    return Backend::kScalar;
  }();
  return chosen;
}

template <typename T>
const KernelTable<T>& active_table() {
  if (active_backend() == Backend::kAvx2) return *avx2_table<T>();
  return scalar_table<T>();
}

template const KernelTable<float>& active_table<float>();
template const KernelTable<double>& active_table<double>();

}  // namespace spjscc::numcore::kernels
