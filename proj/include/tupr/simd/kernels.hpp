#pragma once

#include <cstddef>
#include <span>

#include "tupr/kitti_io.hpp"

// Data-parallel inner loops. Each kernel has a scalar reference in
// tupr::simd::scalar and, on x86-64, an AVX2/FMA variant in tupr::simd::avx2
// compiled in its own translation unit. The unqualified entry points dispatch
// on the backend chosen at startup (CPUID, overridable with TUPR_KERNELS=scalar).

namespace tupr::simd {

enum class Backend { Scalar, Avx2 };

bool avx2_available() noexcept;
Backend active_backend() noexcept;
/// Forces a backend; requesting Avx2 on a machine without it throws UsageError.
void set_backend(Backend backend);
const char* backend_name(Backend backend) noexcept;

/// Row-major view with an explicit row stride (in elements).
struct ConstMatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  const double* row(std::size_t r) const noexcept { return data + r * stride; }
};

struct MatrixView {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  double* row(std::size_t r) const noexcept { return data + r * stride; }
  operator ConstMatrixView() const noexcept { return {data, rows, cols, stride}; }
};

/// c = a * b (or c += a * b when `accumulate`). Shapes: a m x k, b k x n, c m x n.
void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);

/// out[i] = float(sqrt(x^2 + y^2 + z^2)) evaluated in double precision.
void point_ranges(std::span<const Point> points, std::span<float> out);

namespace scalar {
void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);
void point_ranges(std::span<const Point> points, std::span<float> out);
}  // namespace scalar

namespace avx2 {
void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate);
void point_ranges(std::span<const Point> points, std::span<float> out);
}  // namespace avx2

}  // namespace tupr::simd
