#pragma once

#include <functional>
#include <span>
#include <vector>

#include "otgcn/matrix.hpp"

namespace otgcn {

using VarId = std::int32_t;

// Reverse-mode tape over Matrix values. Single-owner, single-threaded:
// record a forward expression, call backward() on a scalar (1x1) node, then
// read grad() for any recorded node. The backward sweep visits each recorded
// op exactly once, in reverse recording order.
class Tape {
 public:
  // Leaf whose gradient is not of interest (inputs, frozen transport plans).
  VarId constant(Matrix value);
  // Leaf whose gradient will be read after backward (model weights).
  VarId param(Matrix value);

  VarId matmul(VarId a, VarId b);
  VarId relu(VarId x);
  VarId row_softmax(VarId x);
  VarId concat_cols(VarId a, VarId b);
  VarId stack_rows(VarId a, VarId b);
  VarId slice_rows(VarId x, std::size_t begin, std::size_t end);
  // x is n x k, bias is 1 x k, broadcast over rows.
  VarId add_row_bias(VarId x, VarId bias);
  // C_ij = sum_d (a_id - b_jd)^2.
  VarId squared_l2_cost(VarId a, VarId b);
  // x / max_entry(x). The argmax (first in row-major order) is saved and the
  // gradient flows through both the entries and the scale. Identity when the
  // max is <= 0.
  VarId scale_by_max(VarId x);
  // Scalar <weights, x> with constant weights.
  VarId inner_with_constant(Matrix weights, VarId x);
  // Scalar mean negative log-likelihood over all rows of probs; labels[i] is
  // the class of row i. Logs are clamped below at 1e-15.
  VarId cross_entropy(VarId probs, std::vector<int> labels);
  VarId add(VarId a, VarId b);
  VarId scale(VarId a, double c);
  // Scalar sum of all entries.
  VarId sum(VarId x);

  const Matrix& value(VarId id) const { return nodes_[id].value; }
  const Matrix& grad(VarId id) const;

  void backward(VarId root);

  std::size_t node_count() const { return nodes_.size(); }

  // True when the node's gradient participates in the backward sweep, i.e.
  // some param leaf is reachable from it. Gradient work into constant-only
  // operands is skipped entirely.
  bool needs_grad(VarId id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Matrix value;
    // Accumulates into operand grads given this node's output gradient.
    std::function<void(Tape&, const Matrix&)> back;
    bool needs_grad = false;
  };

  VarId push(Matrix value, std::function<void(Tape&, const Matrix&)> back,
             bool needs_grad);
  void accumulate(VarId id, const Matrix& g);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  bool ran_backward_ = false;
};

// Central-difference check of an analytic gradient. f evaluates the scalar
// objective at a perturbed copy of `point`; returns the max over entries of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<double(const Matrix&)>& f,
                  const Matrix& point, const Matrix& analytic_grad,
                  double eps = 1e-5);

}  // namespace otgcn
