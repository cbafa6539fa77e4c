#include "otgcn/matrix.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace otgcn {

namespace {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

[[noreturn]] void dim_error(const std::string& op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(op + ": dimension mismatch (" +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + ")");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length does not match rows*cols");
  }
}

Matrix Matrix::from(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw std::invalid_argument("Matrix::from: ragged rows");
    }
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) dim_error("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  if (out.empty() || a.cols() == 0) return out;
  ConstMap ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  ConstMap mb(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MutMap mo(out.data(), static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(out.cols()));
  mo.noalias() = ma * mb;
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  }
  return out;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.data()[i] < 0.0) out.data()[i] = 0.0;
  }
  return out;
}

Matrix row_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
  }
  return out;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) dim_error("concat_cols", a, b);
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

Matrix stack_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) dim_error("stack_rows", a, b);
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Matrix out(end - begin, m.cols());
  std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) dim_error("add", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) dim_error("sub", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) dim_error("hadamard", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
  return out;
}

Matrix scale(const Matrix& m, double c) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
  return out;
}

double sum(const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i];
  return s;
}

double max_entry(const Matrix& m) {
  double mx = -HUGE_VAL;
  for (std::size_t i = 0; i < m.size(); ++i) mx = std::max(mx, m.data()[i]);
  return mx;
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) dim_error("frobenius_inner", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

bool all_finite(const Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) return false;
  }
  return true;
}

void require_finite(const Matrix& m, const std::string& what) {
  if (!all_finite(m)) {
    throw std::runtime_error(what + ": non-finite entry");
  }
}

bool approx_equal(const Matrix& a, const Matrix& b, double tol) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::abs(a.data()[i] - b.data()[i]) <= tol)) return false;
  }
  return true;
}

}  // namespace otgcn
