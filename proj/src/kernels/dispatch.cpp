#include <cstdlib>
#include <string_view>

#include "uavtraj/kernels.hpp"

namespace uavtraj::kernels {
namespace {

constexpr KernelTable kScalarTable{"scalar", &scalar::gemm_nn, &scalar::gemm_tn, &scalar::gemm_nt};
constexpr KernelTable kAvx2Table{"avx2", &avx2::gemm_nn, &avx2::gemm_tn, &avx2::gemm_nt};

const KernelTable& select() {
  if (const char* forced = std::getenv("UAVTRAJ_KERNELS"); forced && std::string_view(forced) == "scalar")
    return kScalarTable;
  if (backend_supported(Backend::kAvx2)) return kAvx2Table;
  return kScalarTable;
}

}  // namespace

bool backend_supported(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Backend backend) { return backend == Backend::kAvx2 ? kAvx2Table : kScalarTable; }

const KernelTable& active() {
  static const KernelTable& chosen = select();
  return chosen;
}

}  // namespace uavtraj::kernels
