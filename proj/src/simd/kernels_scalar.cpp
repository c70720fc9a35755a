#include <cmath>

#include "tupr/simd/kernels.hpp"

namespace tupr::simd::scalar {

void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
  for (std::size_t i = 0; i < c.rows; ++i) {
    double* crow = c.row(i);
    if (!accumulate)
      for (std::size_t j = 0; j < c.cols; ++j) crow[j] = 0.0;
    const double* arow = a.row(i);
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double aip = arow[p];
      const double* brow = b.row(p);
      for (std::size_t j = 0; j < c.cols; ++j) crow[j] += aip * brow[j];
    }
  }
}

void point_ranges(std::span<const Point> points, std::span<float> out) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double x = points[i].x, y = points[i].y, z = points[i].z;
    out[i] = static_cast<float>(std::sqrt(x * x + y * y + z * z));
  }
}

}  // namespace tupr::simd::scalar
