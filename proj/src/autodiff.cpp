#include "otgcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace otgcn {

namespace {
constexpr double kLogClamp = 1e-15;
}

VarId Tape::push(Matrix value, std::function<void(Tape&, const Matrix&)> back,
                 bool needs_grad) {
  if (ran_backward_) {
    throw std::logic_error("Tape: recording after backward()");
  }
  nodes_.push_back({std::move(value), std::move(back), needs_grad});
  return static_cast<VarId>(nodes_.size() - 1);
}

void Tape::accumulate(VarId id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  Matrix& slot = grads_[id];
  if (slot.empty() && g.size() != 0) {
    slot = Matrix(g.rows(), g.cols());
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot.data()[i] += g.data()[i];
}

VarId Tape::constant(Matrix value) { return push(std::move(value), nullptr, false); }

VarId Tape::param(Matrix value) { return push(std::move(value), nullptr, true); }

VarId Tape::matmul(VarId a, VarId b) {
  Matrix out = otgcn::matmul(value(a), value(b));
  const bool grad_a = needs_grad(a);
  const bool grad_b = needs_grad(b);
  return push(std::move(out), [a, b, grad_a, grad_b](Tape& t, const Matrix& g) {
    if (grad_a) t.accumulate(a, otgcn::matmul(g, transpose(t.value(b))));
    if (grad_b) t.accumulate(b, otgcn::matmul(transpose(t.value(a)), g));
  }, grad_a || grad_b);
}

VarId Tape::relu(VarId x) {
  Matrix out = otgcn::relu(value(x));
  return push(std::move(out), [x](Tape& t, const Matrix& g) {
    const Matrix& in = t.value(x);
    Matrix gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      // Subgradient 0 at exactly 0.
      if (!(in.data()[i] > 0.0)) gx.data()[i] = 0.0;
    }
    t.accumulate(x, gx);
  }, needs_grad(x));
}

VarId Tape::row_softmax(VarId x) {
  Matrix out = otgcn::row_softmax(value(x));
  auto probs = std::make_shared<Matrix>(out);
  return push(std::move(out), [x, probs](Tape& t, const Matrix& g) {
    const Matrix& p = *probs;
    Matrix gx(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) {
        gx(i, j) = p(i, j) * (g(i, j) - dot);
      }
    }
    t.accumulate(x, gx);
  }, needs_grad(x));
}

VarId Tape::concat_cols(VarId a, VarId b) {
  Matrix out = otgcn::concat_cols(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
    const std::size_t ca = t.value(a).cols();
    const std::size_t cb = t.value(b).cols();
    Matrix ga(g.rows(), ca), gb(g.rows(), cb);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
      for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  }, needs_grad(a) || needs_grad(b));
}

VarId Tape::stack_rows(VarId a, VarId b) {
  Matrix out = otgcn::stack_rows(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
    const std::size_t ra = t.value(a).rows();
    t.accumulate(a, otgcn::slice_rows(g, 0, ra));
    t.accumulate(b, otgcn::slice_rows(g, ra, g.rows()));
  }, needs_grad(a) || needs_grad(b));
}

VarId Tape::slice_rows(VarId x, std::size_t begin, std::size_t end) {
  Matrix out = otgcn::slice_rows(value(x), begin, end);
  return push(std::move(out), [x, begin](Tape& t, const Matrix& g) {
    Matrix gx(t.value(x).rows(), t.value(x).cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gx(begin + i, j) = g(i, j);
    }
    t.accumulate(x, gx);
  }, needs_grad(x));
}

VarId Tape::add_row_bias(VarId x, VarId bias) {
  const Matrix& xm = value(x);
  const Matrix& bm = value(bias);
  if (bm.rows() != 1 || bm.cols() != xm.cols()) {
    throw std::invalid_argument("add_row_bias: bias must be 1 x cols(x)");
  }
  Matrix out = xm;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bm(0, j);
  }
  return push(std::move(out), [x, bias](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    Matrix gb(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    }
    t.accumulate(bias, gb);
  }, needs_grad(x) || needs_grad(bias));
}

VarId Tape::squared_l2_cost(VarId a, VarId b) {
  const Matrix& am = value(a);
  const Matrix& bm = value(b);
  if (am.cols() != bm.cols()) {
    throw std::invalid_argument("squared_l2_cost: embedding widths differ");
  }
  Matrix out(am.rows(), bm.rows());
  for (std::size_t i = 0; i < am.rows(); ++i) {
    for (std::size_t j = 0; j < bm.rows(); ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < am.cols(); ++d) {
        const double diff = am(i, d) - bm(j, d);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
    const Matrix& am = t.value(a);
    const Matrix& bm = t.value(b);
    Matrix ga(am.rows(), am.cols());
    Matrix gb(bm.rows(), bm.cols());
    for (std::size_t i = 0; i < am.rows(); ++i) {
      for (std::size_t j = 0; j < bm.rows(); ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        for (std::size_t d = 0; d < am.cols(); ++d) {
          const double diff = 2.0 * gij * (am(i, d) - bm(j, d));
          ga(i, d) += diff;
          gb(j, d) -= diff;
        }
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  }, needs_grad(a) || needs_grad(b));
}

VarId Tape::scale_by_max(VarId x) {
  const Matrix& xm = value(x);
  std::size_t arg = 0;
  double m = -HUGE_VAL;
  for (std::size_t i = 0; i < xm.size(); ++i) {
    if (xm.data()[i] > m) {
      m = xm.data()[i];
      arg = i;
    }
  }
  if (!(m > 0.0)) {
    // Degenerate all-zero cost: pass through unchanged.
    Matrix out = xm;
    return push(std::move(out), [x](Tape& t, const Matrix& g) { t.accumulate(x, g); },
                needs_grad(x));
  }
  Matrix out = otgcn::scale(xm, 1.0 / m);
  return push(std::move(out), [x, arg, m](Tape& t, const Matrix& g) {
    const Matrix& xm = t.value(x);
    Matrix gx = otgcn::scale(g, 1.0 / m);
    gx.data()[arg] -= frobenius_inner(g, xm) / (m * m);
    t.accumulate(x, gx);
  }, needs_grad(x));
}

VarId Tape::inner_with_constant(Matrix weights, VarId x) {
  const double v = frobenius_inner(weights, value(x));
  auto w = std::make_shared<Matrix>(std::move(weights));
  return push(Matrix(1, 1, v), [w, x](Tape& t, const Matrix& g) {
    t.accumulate(x, otgcn::scale(*w, g(0, 0)));
  }, needs_grad(x));
}

VarId Tape::cross_entropy(VarId probs, std::vector<int> labels) {
  const Matrix& p = value(probs);
  if (labels.size() != p.rows()) {
    throw std::invalid_argument("cross_entropy: one label per row required");
  }
  const std::size_t k = p.cols();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::invalid_argument("cross_entropy: unlabeled or out-of-range label at row " +
                                  std::to_string(i));
    }
    loss -= std::log(std::max(p(i, static_cast<std::size_t>(y)), kLogClamp));
  }
  const double n = static_cast<double>(p.rows());
  auto ls = std::make_shared<std::vector<int>>(std::move(labels));
  return push(Matrix(1, 1, loss / n), [probs, ls, n](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(probs);
    Matrix gp(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      const auto y = static_cast<std::size_t>((*ls)[i]);
      // Clamped logs contribute no gradient.
      if (p(i, y) > kLogClamp) {
        gp(i, y) = -g(0, 0) / (n * p(i, y));
      }
    }
    t.accumulate(probs, gp);
  }, needs_grad(probs));
}

VarId Tape::add(VarId a, VarId b) {
  Matrix out = otgcn::add(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  }, needs_grad(a) || needs_grad(b));
}

VarId Tape::scale(VarId a, double c) {
  Matrix out = otgcn::scale(value(a), c);
  return push(std::move(out), [a, c](Tape& t, const Matrix& g) {
    t.accumulate(a, otgcn::scale(g, c));
  }, needs_grad(a));
}

VarId Tape::sum(VarId x) {
  return push(Matrix(1, 1, otgcn::sum(value(x))), [x](Tape& t, const Matrix& g) {
    const Matrix& xm = t.value(x);
    t.accumulate(x, Matrix(xm.rows(), xm.cols(), g(0, 0)));
  }, needs_grad(x));
}

const Matrix& Tape::grad(VarId id) const {
  if (!ran_backward_) {
    throw std::logic_error("Tape::grad before backward()");
  }
  return grads_[id];
}

void Tape::backward(VarId root) {
  const Matrix& r = value(root);
  if (r.rows() != 1 || r.cols() != 1) {
    throw std::invalid_argument("Tape::backward: root must be scalar (1x1)");
  }
  grads_.assign(nodes_.size(), Matrix());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].needs_grad) {
      grads_[i] = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
  }
  if (grads_[root].empty()) grads_[root] = Matrix(1, 1);
  grads_[root](0, 0) = 1.0;
  ran_backward_ = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back && !grads_[i].empty()) {
      nodes_[i].back(*this, grads_[i]);
    }
  }
}

double grad_check(const std::function<double(const Matrix&)>& f,
                  const Matrix& point, const Matrix& analytic_grad,
                  double eps) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("grad_check: eps must be positive");
  }
  double worst = 0.0;
  Matrix x = point;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = f(x);
    x.data()[i] = keep - eps;
    const double down = f(x);
    x.data()[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = analytic_grad.data()[i];
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace otgcn
