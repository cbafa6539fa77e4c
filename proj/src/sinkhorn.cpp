#include "otgcn/sinkhorn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace otgcn {

namespace {

// exp(t) below this threshold cannot move a log-sum-exp whose leading term
// is exp(0) = 1, so the terms are skipped. Keeps low-lambda kernels cheap.
constexpr double kLseCutoff = -50.0;

// buf must hold n doubles; splitting the passes keeps them vectorizable.
double log_sum_exp(const double* k, const double* w, double* buf, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) buf[j] = k[j] + w[j];
  double mx = buf[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, buf[j]);
  if (mx == -HUGE_VAL) return -HUGE_VAL;
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = buf[j] - mx;
    if (t > kLseCutoff) s += std::exp(t);
  }
  return mx + std::log(s);
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : -HUGE_VAL; }

}  // namespace

TransportProblem TransportProblem::with_uniform_marginals(Matrix cost, double lambda) {
  TransportProblem p;
  const std::size_t ns = cost.rows();
  const std::size_t nt = cost.cols();
  p.cost = std::move(cost);
  p.mu_s.assign(ns, 1.0 / static_cast<double>(ns));
  p.mu_t.assign(nt, 1.0 / static_cast<double>(nt));
  p.lambda = lambda;
  return p;
}

void TransportProblem::validate() const {
  if (cost.rows() == 0 || cost.cols() == 0) {
    throw std::invalid_argument("TransportProblem: empty cost matrix");
  }
  if (mu_s.size() != cost.rows() || mu_t.size() != cost.cols()) {
    throw std::invalid_argument("TransportProblem: marginal lengths must match cost dims");
  }
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("TransportProblem: lambda must be positive");
  }
  for (std::size_t i = 0; i < cost.size(); ++i) {
    if (!(cost.data()[i] >= 0.0)) {
      throw std::invalid_argument("TransportProblem: cost entries must be >= 0");
    }
  }
  double ss = 0.0, st = 0.0;
  for (double x : mu_s) {
    if (!(x >= 0.0)) throw std::invalid_argument("TransportProblem: negative mass in mu_s");
    ss += x;
  }
  for (double x : mu_t) {
    if (!(x >= 0.0)) throw std::invalid_argument("TransportProblem: negative mass in mu_t");
    st += x;
  }
  if (std::abs(ss - 1.0) > 1e-12 || std::abs(st - 1.0) > 1e-12) {
    throw std::invalid_argument("TransportProblem: marginals must each sum to 1");
  }
}

TransportResult sinkhorn_solve(const TransportProblem& p, const SinkhornOptions& opt) {
  p.validate();
  if (opt.max_iter < 1 || !(opt.tol > 0.0)) {
    throw std::invalid_argument("sinkhorn_solve: max_iter >= 1 and tol > 0 required");
  }
  const std::size_t ns = p.cost.rows();
  const std::size_t nt = p.cost.cols();

  const double scale_raw = max_entry(p.cost);
  const double scale = scale_raw > 0.0 ? scale_raw : 1.0;

  // Kernel exponents K = -C/(scale*lambda), plus a transposed copy so both
  // update directions stream contiguously.
  Matrix k(ns, nt), kt(nt, ns);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < nt; ++j) {
      const double e = -p.cost(i, j) / (scale * p.lambda);
      k(i, j) = e;
      kt(j, i) = e;
    }
  }

  std::vector<double> log_mu_s(ns), log_mu_t(nt);
  for (std::size_t i = 0; i < ns; ++i) log_mu_s[i] = safe_log(p.mu_s[i]);
  for (std::size_t j = 0; j < nt; ++j) log_mu_t[j] = safe_log(p.mu_t[j]);

  std::vector<double> u(ns, 0.0), v(nt, 0.0);
  if (opt.warm_u && opt.warm_u->size() == ns) u = *opt.warm_u;
  if (opt.warm_v && opt.warm_v->size() == nt) v = *opt.warm_v;

  TransportResult res;
  res.cost_scale = scale;

  std::vector<double> row_lse(ns);
  std::vector<double> buf(std::max(ns, nt));
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iter; ++it) {
    for (std::size_t i = 0; i < ns; ++i) {
      row_lse[i] = log_sum_exp(&k(i, 0), v.data(), buf.data(), nt);
    }
    if (it > 0) {
      // Column marginals are exact after every v update, so the current
      // iterate's feasibility is its row violation alone.
      double err = 0.0;
      for (std::size_t i = 0; i < ns; ++i) {
        const double rs = (u[i] == -HUGE_VAL && row_lse[i] == -HUGE_VAL)
                              ? 0.0
                              : std::exp(u[i] + row_lse[i]);
        err += std::abs(rs - p.mu_s[i]);
      }
      if (err < opt.tol) {
        converged = true;
        break;
      }
    }
    for (std::size_t i = 0; i < ns; ++i) u[i] = log_mu_s[i] - row_lse[i];
    for (std::size_t j = 0; j < nt; ++j) {
      v[j] = log_mu_t[j] - log_sum_exp(&kt(j, 0), u.data(), buf.data(), ns);
    }
  }

  res.iterations = it;
  res.converged = converged;

  res.plan = Matrix(ns, nt);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < nt; ++j) {
      const double e = k(i, j) + u[i] + v[j];
      res.plan(i, j) = (e == -HUGE_VAL) ? 0.0 : std::exp(e);
    }
  }
  if (!all_finite(res.plan)) {
    throw std::runtime_error("sinkhorn_solve: NaN in transport plan");
  }

  double rawc = 0.0, normc = 0.0, ent = 0.0;
  double viol_r = 0.0, viol_c = 0.0;
  std::vector<double> colsum(nt, 0.0);
  for (std::size_t i = 0; i < ns; ++i) {
    double rowsum = 0.0;
    for (std::size_t j = 0; j < nt; ++j) {
      const double pij = res.plan(i, j);
      rowsum += pij;
      colsum[j] += pij;
      rawc += pij * p.cost(i, j);
      normc += pij * (p.cost(i, j) / scale);
      if (pij > 0.0) ent -= pij * std::log(pij);
    }
    viol_r += std::abs(rowsum - p.mu_s[i]);
  }
  for (std::size_t j = 0; j < nt; ++j) viol_c += std::abs(colsum[j] - p.mu_t[j]);

  res.transport_cost = rawc;
  res.normalized_cost = normc;
  res.entropy = ent;
  res.ot_loss = normc - p.lambda * ent;
  res.marginal_violation = viol_r + viol_c;
  res.potential_u = std::move(u);
  res.potential_v = std::move(v);
  return res;
}

TransportResult sinkhorn_solve(const TransportProblem& p, int max_iter, double tol) {
  SinkhornOptions opt;
  opt.max_iter = max_iter;
  opt.tol = tol;
  return sinkhorn_solve(p, opt);
}

Matrix squared_l2_cost(const Matrix& src, const Matrix& tgt) {
  if (src.cols() != tgt.cols()) {
    throw std::invalid_argument("squared_l2_cost: embedding widths differ (" +
                                std::to_string(src.cols()) + " vs " +
                                std::to_string(tgt.cols()) + ")");
  }
  Matrix out(src.rows(), tgt.rows());
  for (std::size_t i = 0; i < src.rows(); ++i) {
    for (std::size_t j = 0; j < tgt.rows(); ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < src.cols(); ++d) {
        const double diff = src(i, d) - tgt(j, d);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return out;
}

Matrix barycentric_map(const Matrix& plan, const Matrix& target_embedding) {
  if (plan.cols() != target_embedding.rows()) {
    throw std::invalid_argument("barycentric_map: plan cols must match target rows");
  }
  const std::size_t ns = plan.rows();
  const std::size_t nt = plan.cols();
  const std::size_t d = target_embedding.cols();
  Matrix out(ns, d);
  for (std::size_t i = 0; i < ns; ++i) {
    double rowsum = 0.0;
    for (std::size_t j = 0; j < nt; ++j) rowsum += plan(i, j);
    if (!(rowsum > 0.0)) {
      throw std::invalid_argument("barycentric_map: zero plan row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < nt; ++j) {
      const double w = plan(i, j) / rowsum;
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) {
        out(i, c) += w * target_embedding(j, c);
      }
    }
  }
  return out;
}

Matrix ot_gradient_wrt_cost(const TransportResult& result) { return result.plan; }

}  // namespace otgcn
