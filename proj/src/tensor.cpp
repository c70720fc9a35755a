#include "tupr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tupr/common.hpp"

namespace tupr {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: data size mismatch");
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix transpose(simd::ConstMatrixView m) {
  Matrix t(m.cols, m.rows);
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < m.rows; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < m.cols; j0 += kBlock)
      for (std::size_t i = i0; i < std::min(i0 + kBlock, m.rows); ++i)
        for (std::size_t j = j0; j < std::min(j0 + kBlock, m.cols); ++j) t(j, i) = m.row(i)[j];
  return t;
}

namespace {

void check_inner(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw NumericError(std::string(op) + ": inner dimension mismatch");
}

}  // namespace

Matrix matmul(simd::ConstMatrixView a, simd::ConstMatrixView b) {
  check_inner(a.cols, b.rows, "matmul");
  Matrix c(a.rows, b.cols);
  simd::gemm(a, b, c.view(), false);
  return c;
}

Matrix matmul_nt(simd::ConstMatrixView a, simd::ConstMatrixView b) {
  check_inner(a.cols, b.cols, "matmul_nt");
  const Matrix bt = transpose(b);
  Matrix c(a.rows, b.rows);
  simd::gemm(a, bt.view(), c.view(), false);
  return c;
}

Matrix matmul_tn(simd::ConstMatrixView a, simd::ConstMatrixView b) {
  check_inner(a.rows, b.rows, "matmul_tn");
  const Matrix at = transpose(a);
  Matrix c(a.cols, b.cols);
  simd::gemm(at.view(), b, c.view(), false);
  return c;
}

void matmul_tn_acc(simd::ConstMatrixView a, simd::ConstMatrixView b, Matrix& out) {
  check_inner(a.rows, b.rows, "matmul_tn_acc");
  if (out.rows() != a.cols || out.cols() != b.cols)
    throw NumericError("matmul_tn_acc: output shape mismatch");
  const Matrix at = transpose(a);
  simd::gemm(at.view(), b, out.view(), true);
}

void add_row_vector(Matrix& m, std::span<const double> v) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += v[j];
  }
}

void add_column_sums(const Matrix& m, std::span<double> out) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (double& x : o) x /= sum;
  }
  return out;
}

}  // namespace tupr
