#pragma once

#include <vector>

#include "otgcn/matrix.hpp"

namespace otgcn {

// Entropic optimal transport between two discrete distributions under a
// nonnegative cost. The solver normalizes the cost by its maximum entry so
// the regularization weight keeps one meaning regardless of embedding scale;
// losses are reported in both normalized and raw units.
struct TransportProblem {
  Matrix cost;                  // n_s x n_t, raw units
  std::vector<double> mu_s;     // length n_s, sums to 1
  std::vector<double> mu_t;     // length n_t, sums to 1
  double lambda = 0.01;         // entropic regularization weight, > 0

  static TransportProblem with_uniform_marginals(Matrix cost, double lambda);
  void validate() const;
};

struct TransportResult {
  Matrix plan;                   // n_s x n_t, entrywise >= 0
  double ot_loss = 0.0;          // <P, C/scale> - lambda * H(P)
  double normalized_cost = 0.0;  // <P, C/scale>
  double transport_cost = 0.0;   // <P, C> in raw cost units
  double entropy = 0.0;          // H(P) = -sum P log P
  double cost_scale = 1.0;       // max cost entry used for normalization
  double marginal_violation = 0.0;  // final row+col l1 violation
  int iterations = 0;
  bool converged = false;
  // Final log-domain potentials; feed back in as a warm start when solving a
  // sequence of nearby problems.
  std::vector<double> potential_u, potential_v;
};

struct SinkhornOptions {
  int max_iter = 1000;
  double tol = 1e-9;  // l1 marginal violation
  const std::vector<double>* warm_u = nullptr;
  const std::vector<double>* warm_v = nullptr;
};

// Log-domain Sinkhorn iteration (log-sum-exp updates throughout, so small
// lambda on squared-l2 costs cannot underflow). Returns converged=false when
// max_iter is exhausted; throws only on NaN, which the log-domain updates
// rule out for valid problems.
TransportResult sinkhorn_solve(const TransportProblem& p, const SinkhornOptions& opt);
TransportResult sinkhorn_solve(const TransportProblem& p, int max_iter = 1000,
                               double tol = 1e-9);

// C_ij = sum_d (src_id - tgt_jd)^2.
Matrix squared_l2_cost(const Matrix& src, const Matrix& tgt);

// hat(H)_s = diag(plan * 1)^{-1} * plan * target_embedding. Throws on a zero
// plan row (the barycenter of nothing is undefined).
Matrix barycentric_map(const Matrix& plan, const Matrix& target_embedding);

// d ot_loss / d cost under the plan-frozen (envelope) convention: the plan
// itself, in normalized cost units.
Matrix ot_gradient_wrt_cost(const TransportResult& result);

}  // namespace otgcn
