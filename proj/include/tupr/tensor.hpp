#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tupr/simd/kernels.hpp"

namespace tupr {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  simd::MatrixView view() noexcept { return {data_.data(), rows_, cols_, cols_}; }
  simd::ConstMatrixView view() const noexcept { return {data_.data(), rows_, cols_, cols_}; }

  /// Columns [first, first + count) as a strided view.
  simd::ConstMatrixView columns(std::size_t first, std::size_t count) const noexcept {
    return {data_.data() + first, rows_, count, cols_};
  }
  simd::MatrixView columns(std::size_t first, std::size_t count) noexcept {
    return {data_.data() + first, rows_, count, cols_};
  }

  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(simd::ConstMatrixView m);
inline Matrix transpose(const Matrix& m) { return transpose(m.view()); }

/// a * b
Matrix matmul(simd::ConstMatrixView a, simd::ConstMatrixView b);
/// a * b^T
Matrix matmul_nt(simd::ConstMatrixView a, simd::ConstMatrixView b);
/// a^T * b
Matrix matmul_tn(simd::ConstMatrixView a, simd::ConstMatrixView b);
/// out += a^T * b
void matmul_tn_acc(simd::ConstMatrixView a, simd::ConstMatrixView b, Matrix& out);

void add_row_vector(Matrix& m, std::span<const double> v);
/// out[j] += sum_i m(i, j)
void add_column_sums(const Matrix& m, std::span<double> out);

/// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace tupr
