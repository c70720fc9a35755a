// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "tupr/simd/kernels.hpp"

namespace tupr::simd::avx2 {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 8;
constexpr std::size_t kDepthBlock = 256;

// 4x8 register tile: c[0..4, 0..8) += a[0..4, p0..p1) * b[p0..p1, 0..8).
inline void tile_4x8(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, std::size_t depth) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t p = 0; p < depth; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// Single row, 8 columns.
inline void tile_1x8(const double* a, const double* b, std::size_t ldb, double* c,
                     std::size_t depth) {
  __m256d c0 = _mm256_loadu_pd(c), c1 = _mm256_loadu_pd(c + 4);
  for (std::size_t p = 0; p < depth; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

}  // namespace

void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  const std::size_t m = c.rows, n = c.cols, k = a.cols;
  if (!accumulate)
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c.row(i), n, 0.0);
  const std::size_t n_main = n - n % kColBlock;
  const std::size_t m_main = m - m % kRowBlock;

  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t depth = std::min(kDepthBlock, k - p0);
    for (std::size_t j = 0; j < n_main; j += kColBlock) {
      const double* bpanel = b.row(p0) + j;
      std::size_t i = 0;
      for (; i < m_main; i += kRowBlock)
        tile_4x8(a.row(i) + p0, a.stride, bpanel, b.stride, c.row(i) + j, c.stride, depth);
      for (; i < m; ++i) tile_1x8(a.row(i) + p0, bpanel, b.stride, c.row(i) + j, depth);
    }
    if (n_main < n) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i) + p0;
        double* crow = c.row(i);
        for (std::size_t p = 0; p < depth; ++p) {
          const double av = arow[p];
          const double* brow = b.row(p0 + p);
          for (std::size_t j = n_main; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
        }
      }
    }
  }
}

void point_ranges(std::span<const Point> points, std::span<float> out) {
  static_assert(sizeof(Point) == 4 * sizeof(float));
  const float* base = reinterpret_cast<const float*>(points.data());
  const std::size_t n = points.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m128 r0 = _mm_loadu_ps(base + 4 * i);
    __m128 r1 = _mm_loadu_ps(base + 4 * i + 4);
    __m128 r2 = _mm_loadu_ps(base + 4 * i + 8);
    __m128 r3 = _mm_loadu_ps(base + 4 * i + 12);
    _MM_TRANSPOSE4_PS(r0, r1, r2, r3);  // r0 = x, r1 = y, r2 = z
    const __m256d x = _mm256_cvtps_pd(r0);
    const __m256d y = _mm256_cvtps_pd(r1);
    const __m256d z = _mm256_cvtps_pd(r2);
    // Separate multiplies and adds keep rounding identical to the scalar path.
    __m256d s = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(x, x), _mm256_mul_pd(y, y)),
                              _mm256_mul_pd(z, z));
    _mm_storeu_ps(out.data() + i, _mm256_cvtpd_ps(_mm256_sqrt_pd(s)));
  }
  for (; i < n; ++i) {
    const double x = points[i].x, y = points[i].y, z = points[i].z;
    out[i] = static_cast<float>(std::sqrt(x * x + y * y + z * z));
  }
}

}  // namespace tupr::simd::avx2
