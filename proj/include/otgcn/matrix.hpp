#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace otgcn {

// Dense row-major matrix of doubles. The single numeric carrier for
// features, adjacency, embeddings, transport plans and parameters.
// Immutable by convention once handed to an operation; all ops return
// fresh values.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Row-major initializer, e.g. Matrix::from({{1, 2}, {3, 4}}).
  static Matrix from(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Standard product; throws std::invalid_argument on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// Elementwise max(0, x).
Matrix relu(const Matrix& x);

// Row-wise softmax with per-row max subtraction; every output row sums to 1.
Matrix row_softmax(const Matrix& x);

// Horizontal concatenation [a | b]; rows must match.
Matrix concat_cols(const Matrix& a, const Matrix& b);

// Vertical concatenation [a; b]; cols must match.
Matrix stack_rows(const Matrix& a, const Matrix& b);

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double c);

double sum(const Matrix& m);
double max_entry(const Matrix& m);
double frobenius_inner(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

// Throws std::runtime_error naming `what` if any entry is NaN/Inf.
void require_finite(const Matrix& m, const std::string& what);

// True when |a - b| <= tol entrywise (shapes must match).
bool approx_equal(const Matrix& a, const Matrix& b, double tol);

}  // namespace otgcn
