#include "uavtraj/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#define UAVTRAJ_AVX2 __attribute__((target("avx2,fma")))

namespace uavtraj::kernels::avx2 {
namespace {

// C += A * B where A(i, p) = a[i * a_rs + p * a_cs]; B and C row-major.
// Register block: 4 rows x 8 columns (eight accumulators).
UAVTRAJ_AVX2 void gemm_broadcast(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs,
                                 std::size_t a_cs, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * a_rs;
    const double* a1 = a + (i + 1) * a_rs;
    const double* a2 = a + (i + 2) * a_rs;
    const double* a3 = a + (i + 3) * a_rs;
    double* c0 = c + (i + 0) * ldc;
    double* c1 = c + (i + 1) * ldc;
    double* c2 = c + (i + 2) * ldc;
    double* c3 = c + (i + 3) * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const std::size_t ap = p * a_cs;
        __m256d s = _mm256_broadcast_sd(a0 + ap);
        r00 = _mm256_fmadd_pd(s, b0, r00);
        r01 = _mm256_fmadd_pd(s, b1, r01);
        s = _mm256_broadcast_sd(a1 + ap);
        r10 = _mm256_fmadd_pd(s, b0, r10);
        r11 = _mm256_fmadd_pd(s, b1, r11);
        s = _mm256_broadcast_sd(a2 + ap);
        r20 = _mm256_fmadd_pd(s, b0, r20);
        r21 = _mm256_fmadd_pd(s, b1, r21);
        s = _mm256_broadcast_sd(a3 + ap);
        r30 = _mm256_fmadd_pd(s, b0, r30);
        r31 = _mm256_fmadd_pd(s, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d r0 = _mm256_loadu_pd(c0 + j), r1 = _mm256_loadu_pd(c1 + j);
      __m256d r2 = _mm256_loadu_pd(c2 + j), r3 = _mm256_loadu_pd(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * ldb + j);
        const std::size_t ap = p * a_cs;
        r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + ap), bv, r0);
        r1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + ap), bv, r1);
        r2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + ap), bv, r2);
        r3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + ap), bv, r3);
      }
      _mm256_storeu_pd(c0 + j, r0), _mm256_storeu_pd(c1 + j, r1);
      _mm256_storeu_pd(c2 + j, r2), _mm256_storeu_pd(c3 + j, r3);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * ldb + j];
        const std::size_t ap = p * a_cs;
        s0 += a0[ap] * bv;
        s1 += a1[ap] * bv;
        s2 += a2[ap] * bv;
        s3 += a3[ap] * bv;
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * a_rs;
    double* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d r = _mm256_loadu_pd(ci + j);
      for (std::size_t p = 0; p < k; ++p)
        r = _mm256_fmadd_pd(_mm256_broadcast_sd(ai + p * a_cs), _mm256_loadu_pd(b + p * ldb + j), r);
      _mm256_storeu_pd(ci + j, r);
    }
    for (; j < n; ++j) {
      double s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s += ai[p * a_cs] * b[p * ldb + j];
      ci[j] = s;
    }
  }
}

UAVTRAJ_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

UAVTRAJ_AVX2 double dot(const double* x, const double* y, std::size_t k) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + p + 4), _mm256_loadu_pd(y + p + 4), acc1);
  }
  for (; p + 4 <= k; p += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; p < k; ++p) s += x[p] * y[p];
  return s;
}

}  // namespace

UAVTRAJ_AVX2 void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_broadcast(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

UAVTRAJ_AVX2 void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_broadcast(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

// Dot-product form: both operands are contiguous along the reduction axis.
// Register block: 2 rows of A x 4 rows of B.
UAVTRAJ_AVX2 void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t k4 = k & ~std::size_t{3};
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      __m256d r00 = _mm256_setzero_pd(), r01 = _mm256_setzero_pd(), r02 = _mm256_setzero_pd(),
              r03 = _mm256_setzero_pd();
      __m256d r10 = _mm256_setzero_pd(), r11 = _mm256_setzero_pd(), r12 = _mm256_setzero_pd(),
              r13 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d x0 = _mm256_loadu_pd(a0 + p);
        const __m256d x1 = _mm256_loadu_pd(a1 + p);
        __m256d y = _mm256_loadu_pd(b0 + p);
        r00 = _mm256_fmadd_pd(x0, y, r00);
        r10 = _mm256_fmadd_pd(x1, y, r10);
        y = _mm256_loadu_pd(b1 + p);
        r01 = _mm256_fmadd_pd(x0, y, r01);
        r11 = _mm256_fmadd_pd(x1, y, r11);
        y = _mm256_loadu_pd(b2 + p);
        r02 = _mm256_fmadd_pd(x0, y, r02);
        r12 = _mm256_fmadd_pd(x1, y, r12);
        y = _mm256_loadu_pd(b3 + p);
        r03 = _mm256_fmadd_pd(x0, y, r03);
        r13 = _mm256_fmadd_pd(x1, y, r13);
      }
      double s[2][4] = {{hsum(r00), hsum(r01), hsum(r02), hsum(r03)}, {hsum(r10), hsum(r11), hsum(r12), hsum(r13)}};
      for (std::size_t p = k4; p < k; ++p) {
        for (int q = 0; q < 4; ++q) {
          s[0][q] += a0[p] * b[(j + q) * ldb + p];
          s[1][q] += a1[p] * b[(j + q) * ldb + p];
        }
      }
      for (int q = 0; q < 4; ++q) {
        c[i * ldc + j + q] += s[0][q];
        c[(i + 1) * ldc + j + q] += s[1][q];
      }
    }
    for (; j < n; ++j) {
      c[i * ldc + j] += dot(a0, b + j * ldb, k);
      c[(i + 1) * ldc + j] += dot(a1, b + j * ldb, k);
    }
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
}

}  // namespace uavtraj::kernels::avx2

#else

#include <stdexcept>

namespace uavtraj::kernels::avx2 {

void gemm_nn(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*, std::size_t, double*,
             std::size_t) {
  throw std::logic_error("AVX2 kernels are not available on this architecture");
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace uavtraj::kernels::avx2

#endif
