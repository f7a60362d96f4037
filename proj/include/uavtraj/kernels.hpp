#pragma once

// Dense row-major double GEMM kernels used by the sequence model.
//
// Every kernel accumulates into C (C += op(A) * op(B)). A portable scalar
// reference implementation is always available; an AVX2/FMA variant is
// selected at runtime when the CPU supports it. The environment variable
// UAVTRAJ_KERNELS=scalar forces the reference path.

#include <cstddef>
#include <string_view>

namespace uavtraj::kernels {

// C[M x N] += A[M x K] * B[K x N]
using GemmNN = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                        const double* b, std::size_t ldb, double* c, std::size_t ldc);
// C[M x N] += A^T * B, with A stored as [K x M]
using GemmTN = GemmNN;
// C[M x N] += A * B^T, with B stored as [N x K]
using GemmNT = GemmNN;

struct KernelTable {
  std::string_view name;
  GemmNN gemm_nn;
  GemmTN gemm_tn;
  GemmNT gemm_nt;
};

enum class Backend { kScalar, kAvx2 };

namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
}  // namespace scalar

namespace avx2 {
// Only callable when backend_supported(Backend::kAvx2) is true.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
}  // namespace avx2

bool backend_supported(Backend backend);
const KernelTable& table(Backend backend);

/// Kernels chosen for this process (CPU features + UAVTRAJ_KERNELS override).
const KernelTable& active();

}  // namespace uavtraj::kernels
