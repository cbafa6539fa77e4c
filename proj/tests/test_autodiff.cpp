#include "doctest.h"

#include <stdexcept>

#include <cmath>

#include "otgcn/autodiff.hpp"
#include "otgcn/rng.hpp"

using namespace otgcn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST_CASE("grad_check accepts exact analytic gradients") {
  const Matrix x = Matrix::from({{0.3, -0.7}, {1.2, 0.4}});

  SUBCASE("sum of entries has all-ones gradient") {
    auto f = [](const Matrix& m) { return sum(m); };
    const double err = grad_check(f, x, Matrix(2, 2, 1.0));
    CHECK(err < 1e-9);
  }
  SUBCASE("half squared norm has gradient x") {
    auto f = [](const Matrix& m) {
      double s = 0.0;
      for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
      return 0.5 * s;
    };
    CHECK(grad_check(f, x, x) < 1e-7);
  }
}

TEST_CASE("relu gradient convention at zero") {
  Tape t;
  const VarId x = t.param(Matrix::from({{-1.0, 2.0}}));
  const VarId s = t.sum(t.relu(x));
  t.backward(s);
  CHECK(t.grad(x) == Matrix::from({{0.0, 1.0}}));

  Tape t2;
  const VarId z = t2.param(Matrix::from({{0.0}}));
  const VarId s2 = t2.sum(t2.relu(z));
  t2.backward(s2);
  CHECK(t2.grad(z)(0, 0) == 0.0);
}

TEST_CASE("concat gradient splits upstream into both slots") {
  Tape t;
  const VarId a = t.param(Matrix::from({{1.0, 2.0}}));
  const VarId b = t.param(Matrix::from({{3.0}}));
  const VarId s = t.sum(t.concat_cols(a, b));
  t.backward(s);
  CHECK(t.grad(a) == Matrix::from({{1.0, 1.0}}));
  CHECK(t.grad(b) == Matrix::from({{1.0}}));
}

TEST_CASE("shared subexpression accumulates both paths") {
  Tape t;
  const VarId a = t.param(Matrix::from({{2.0, -1.0}}));
  const VarId s = t.sum(t.concat_cols(a, a));
  t.backward(s);
  CHECK(t.grad(a) == Matrix::from({{2.0, 2.0}}));
}

TEST_CASE("every recorded op matches central differences") {
  Rng rng(17);

  SUBCASE("matmul wrt both operands") {
    const Matrix a0 = random_matrix(3, 4, rng);
    const Matrix b0 = random_matrix(4, 2, rng);
    {
      Tape t;
      const VarId a = t.param(a0);
      const VarId b = t.constant(b0);
      t.backward(t.sum(t.matmul(a, b)));
      auto f = [&](const Matrix& m) { return sum(matmul(m, b0)); };
      CHECK(grad_check(f, a0, t.grad(a)) < 1e-6);
    }
    {
      Tape t;
      const VarId a = t.constant(a0);
      const VarId b = t.param(b0);
      t.backward(t.sum(t.matmul(a, b)));
      auto f = [&](const Matrix& m) { return sum(matmul(a0, m)); };
      CHECK(grad_check(f, b0, t.grad(b)) < 1e-6);
    }
  }

  SUBCASE("relu away from the kink") {
    Matrix x0 = random_matrix(3, 4, rng);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      if (std::abs(x0.data()[i]) < 0.05) x0.data()[i] = 0.1;  // keep FD off the kink
    }
    const Matrix w = random_matrix(3, 4, rng);
    Tape t;
    const VarId x = t.param(x0);
    t.backward(t.inner_with_constant(w, t.relu(x)));
    auto f = [&](const Matrix& m) { return frobenius_inner(w, relu(m)); };
    CHECK(grad_check(f, x0, t.grad(x)) < 1e-6);
  }

  SUBCASE("concat_cols") {
    const Matrix a0 = random_matrix(3, 2, rng);
    const Matrix b0 = random_matrix(3, 4, rng);
    const Matrix w = random_matrix(3, 6, rng);
    Tape t;
    const VarId a = t.param(a0);
    t.backward(t.inner_with_constant(w, t.concat_cols(a, t.constant(b0))));
    auto f = [&](const Matrix& m) { return frobenius_inner(w, concat_cols(m, b0)); };
    CHECK(grad_check(f, a0, t.grad(a)) < 1e-6);
  }

  SUBCASE("row_softmax") {
    const Matrix x0 = random_matrix(3, 4, rng);
    const Matrix w = random_matrix(3, 4, rng);  // weights make the scalar generic
    Tape t;
    const VarId x = t.param(x0);
    t.backward(t.inner_with_constant(w, t.row_softmax(x)));
    auto f = [&](const Matrix& m) { return frobenius_inner(w, row_softmax(m)); };
    CHECK(grad_check(f, x0, t.grad(x)) < 1e-6);
  }

  SUBCASE("squared_l2_cost wrt both operands") {
    const Matrix a0 = random_matrix(3, 5, rng);
    const Matrix b0 = random_matrix(4, 5, rng);
    const Matrix w = random_matrix(3, 4, rng);
    {
      Tape t;
      const VarId a = t.param(a0);
      t.backward(t.inner_with_constant(w, t.squared_l2_cost(a, t.constant(b0))));
      auto f = [&](const Matrix& m) {
        Tape tt;
        return frobenius_inner(w, tt.value(tt.squared_l2_cost(tt.constant(m), tt.constant(b0))));
      };
      CHECK(grad_check(f, a0, t.grad(a)) < 1e-6);
    }
    {
      Tape t;
      const VarId b = t.param(b0);
      t.backward(t.inner_with_constant(w, t.squared_l2_cost(t.constant(a0), b)));
      auto f = [&](const Matrix& m) {
        Tape tt;
        return frobenius_inner(w, tt.value(tt.squared_l2_cost(tt.constant(a0), tt.constant(m))));
      };
      CHECK(grad_check(f, b0, t.grad(b)) < 1e-6);
    }
  }

  SUBCASE("scale_by_max") {
    Matrix x0 = random_matrix(3, 3, rng, 0.1, 1.0);
    x0(1, 2) = 2.0;  // unique, comfortably separated max
    const Matrix w = random_matrix(3, 3, rng);
    Tape t;
    const VarId x = t.param(x0);
    t.backward(t.inner_with_constant(w, t.scale_by_max(x)));
    auto f = [&](const Matrix& m) {
      Tape tt;
      return frobenius_inner(w, tt.value(tt.scale_by_max(tt.constant(m))));
    };
    CHECK(grad_check(f, x0, t.grad(x)) < 1e-6);
  }

  SUBCASE("add_row_bias wrt bias") {
    const Matrix x0 = random_matrix(4, 3, rng);
    const Matrix b0 = random_matrix(1, 3, rng);
    const Matrix w = random_matrix(4, 3, rng);
    Tape t;
    const VarId x = t.constant(x0);
    const VarId b = t.param(b0);
    t.backward(t.inner_with_constant(w, t.add_row_bias(x, b)));
    auto f = [&](const Matrix& m) {
      Tape tt;
      return frobenius_inner(w, tt.value(tt.add_row_bias(tt.constant(x0), tt.constant(m))));
    };
    CHECK(grad_check(f, b0, t.grad(b)) < 1e-6);
  }

  SUBCASE("cross_entropy through softmax") {
    const Matrix x0 = random_matrix(5, 3, rng);
    const std::vector<int> labels = {0, 2, 1, 1, 0};
    Tape t;
    const VarId x = t.param(x0);
    t.backward(t.cross_entropy(t.row_softmax(x), labels));
    auto f = [&](const Matrix& m) {
      Tape tt;
      return tt.value(tt.cross_entropy(tt.row_softmax(tt.constant(m)), labels))(0, 0);
    };
    CHECK(grad_check(f, x0, t.grad(x)) < 1e-6);
  }

  SUBCASE("stack and slice") {
    const Matrix a0 = random_matrix(2, 3, rng);
    const Matrix b0 = random_matrix(3, 3, rng);
    const Matrix w = random_matrix(2, 3, rng);
    Tape t;
    const VarId a = t.param(a0);
    const VarId stacked = t.stack_rows(a, t.constant(b0));
    t.backward(t.inner_with_constant(w, t.slice_rows(stacked, 1, 3)));
    auto f = [&](const Matrix& m) {
      return frobenius_inner(w, slice_rows(stack_rows(m, b0), 1, 3));
    };
    CHECK(grad_check(f, a0, t.grad(a)) < 1e-6);
  }
}

TEST_CASE("cross_entropy rejects unlabeled rows") {
  Tape t;
  const VarId p = t.constant(Matrix::from({{0.5, 0.5}}));
  CHECK_THROWS_AS(t.cross_entropy(p, {-1}), std::invalid_argument);
}

TEST_CASE("backward requires scalar root") {
  Tape t;
  const VarId x = t.param(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}
