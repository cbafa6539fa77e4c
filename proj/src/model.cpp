#include "otgcn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "otgcn/autodiff.hpp"

namespace otgcn {

namespace {

constexpr double kLogClamp = 1e-15;

Matrix glorot_matrix(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  return w;
}

// Everything the trainer and the pure forward passes share: one recorded
// computation graph per evaluation.
struct TapeModel {
  Tape tape;
  std::vector<VarId> params;
  VarId h_gcn = -1;
  VarId h_nft = -1;
  VarId h_concat = -1;
  VarId logits = -1;
  VarId probs = -1;
  VarId ce = -1;
  VarId ot = -1;
  VarId joint = -1;
  VarId transported = -1;
  TransportResult transport;
  bool used_transport = false;
};

TapeModel build_tape(const CombinedGraph& g, const ModelParams& p, const LossOptions& opt) {
  TapeModel m;
  Tape& t = m.tape;
  const std::size_t ns = g.n_source;
  const std::size_t n = g.graph.size();

  const VarId x = t.constant(g.graph.features);
  const VarId adj = t.constant(g.norm_adj.m);

  const VarId gcn_w1 = t.param(p.gcn_w1);
  const VarId gcn_w2 = t.param(p.gcn_w2);
  m.params = {gcn_w1, gcn_w2};

  const VarId g1 = t.relu(t.matmul(t.matmul(adj, x), gcn_w1));
  m.h_gcn = t.relu(t.matmul(t.matmul(adj, g1), gcn_w2));

  if (p.variant == ModelVariant::Full) {
    const VarId nft_w1 = t.param(p.nft_w1);
    const VarId nft_b1 = t.param(p.nft_b1);
    const VarId nft_w2 = t.param(p.nft_w2);
    const VarId nft_b2 = t.param(p.nft_b2);
    m.params.insert(m.params.end(), {nft_w1, nft_b1, nft_w2, nft_b2});
    const VarId l1 = t.relu(t.add_row_bias(t.matmul(x, nft_w1), nft_b1));
    m.h_nft = t.relu(t.add_row_bias(t.matmul(l1, nft_w2), nft_b2));
    m.h_concat = t.concat_cols(m.h_nft, m.h_gcn);
  } else {
    m.h_concat = m.h_gcn;
  }

  const VarId head_w = t.param(p.head_w);
  const VarId head_b = t.param(p.head_b);
  m.params.insert(m.params.end(), {head_w, head_b});

  VarId classifier_in = m.h_concat;
  if (opt.use_transport) {
    if (g.n_target == 0) {
      throw std::invalid_argument("forward_ot: no target nodes to transport onto");
    }
    const VarId h_src = t.slice_rows(m.h_concat, 0, ns);
    const VarId h_tgt = t.slice_rows(m.h_concat, ns, n);
    const VarId cost_raw = t.squared_l2_cost(h_src, h_tgt);
    const VarId cost_norm = t.scale_by_max(cost_raw);

    TransportProblem prob =
        TransportProblem::with_uniform_marginals(t.value(cost_norm), opt.lambda);
    m.transport = sinkhorn_solve(prob, opt.sinkhorn);
    // Report diagnostics in the units of the unnormalized cost as well.
    m.transport.cost_scale = max_entry(t.value(cost_raw)) > 0.0
                                 ? max_entry(t.value(cost_raw))
                                 : 1.0;
    m.transport.transport_cost = frobenius_inner(m.transport.plan, t.value(cost_raw));
    m.used_transport = true;

    // Plan frozen from here on: gradients flow through the cost matrix and
    // through the target embedding inside the barycentric combination.
    Matrix weights(m.transport.plan.rows(), m.transport.plan.cols());
    for (std::size_t i = 0; i < weights.rows(); ++i) {
      double rowsum = 0.0;
      for (std::size_t j = 0; j < weights.cols(); ++j) rowsum += m.transport.plan(i, j);
      if (!(rowsum > 0.0)) {
        throw std::runtime_error("forward_ot: transport plan has a zero row");
      }
      for (std::size_t j = 0; j < weights.cols(); ++j) {
        weights(i, j) = m.transport.plan(i, j) / rowsum;
      }
    }
    m.transported = t.matmul(t.constant(std::move(weights)), h_tgt);
    classifier_in = t.stack_rows(m.transported, h_tgt);

    const VarId plan_cost = t.inner_with_constant(m.transport.plan, cost_norm);
    m.ot = t.add(plan_cost,
                 t.constant(Matrix(1, 1, -opt.lambda * m.transport.entropy)));
  }

  m.logits = t.add_row_bias(t.matmul(classifier_in, head_w), head_b);
  m.probs = t.row_softmax(m.logits);
  return m;
}

void attach_losses(TapeModel& m, const CombinedGraph& g, const LossOptions& opt) {
  Tape& t = m.tape;
  const VarId src_probs = t.slice_rows(m.probs, 0, g.n_source);
  m.ce = t.cross_entropy(src_probs, g.source_labels);
  if (m.used_transport) {
    m.joint = t.add(m.ce, t.scale(m.ot, opt.theta));
  } else {
    m.joint = m.ce;
  }
}

ForwardOutput extract_output(const TapeModel& m) {
  ForwardOutput out;
  out.h_gcn = m.tape.value(m.h_gcn);
  if (m.h_nft >= 0) out.h_nft = m.tape.value(m.h_nft);
  out.h_concat = m.tape.value(m.h_concat);
  out.logits = m.tape.value(m.logits);
  out.probs = m.tape.value(m.probs);
  return out;
}

}  // namespace

ModelParams ModelParams::glorot(ModelVariant variant, int feature_dim, int num_classes,
                                Rng& rng, int hidden1, int hidden2) {
  if (feature_dim < 1 || num_classes < 2 || hidden1 < 1 || hidden2 < 1) {
    throw std::invalid_argument("ModelParams::glorot: bad dimensions");
  }
  ModelParams p;
  p.variant = variant;
  p.feature_dim = feature_dim;
  p.num_classes = num_classes;
  p.hidden1 = hidden1;
  p.hidden2 = hidden2;
  const auto m = static_cast<std::size_t>(feature_dim);
  const auto h1 = static_cast<std::size_t>(hidden1);
  const auto h2 = static_cast<std::size_t>(hidden2);
  const auto k = static_cast<std::size_t>(num_classes);

  p.gcn_w1 = glorot_matrix(m, h1, rng);
  p.gcn_w2 = glorot_matrix(h1, h2, rng);
  if (variant == ModelVariant::Full) {
    p.nft_w1 = glorot_matrix(m, h1, rng);
    p.nft_b1 = Matrix(1, h1);
    p.nft_w2 = glorot_matrix(h1, h2, rng);
    p.nft_b2 = Matrix(1, h2);
  }
  p.head_w = glorot_matrix(p.embed_width(), k, rng);
  p.head_b = Matrix(1, k);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::entries() {
  std::vector<std::pair<std::string, Matrix*>> v = {{"gcn_w1", &gcn_w1},
                                                    {"gcn_w2", &gcn_w2}};
  if (variant == ModelVariant::Full) {
    v.insert(v.end(), {{"nft_w1", &nft_w1},
                       {"nft_b1", &nft_b1},
                       {"nft_w2", &nft_w2},
                       {"nft_b2", &nft_b2}});
  }
  v.insert(v.end(), {{"head_w", &head_w}, {"head_b", &head_b}});
  return v;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::entries() const {
  std::vector<std::pair<std::string, const Matrix*>> v;
  for (auto& [name, mat] : const_cast<ModelParams*>(this)->entries()) {
    v.emplace_back(name, mat);
  }
  return v;
}

void ModelParams::require_finite_all() const {
  for (const auto& [name, mat] : entries()) {
    require_finite(*mat, "ModelParams " + name);
  }
}

Matrix gcn_layer(const Matrix& h, const NormalizedAdjacency& norm_adj, const Matrix& w) {
  return relu(matmul(matmul(norm_adj.m, h), w));
}

Matrix nft_layer(const Matrix& h, const Matrix& w, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw std::invalid_argument("nft_layer: bias must be 1 x cols(w)");
  }
  Matrix z = matmul(h, w);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += b(0, j);
  }
  return relu(z);
}

CombinedGraph prepare_combined(const AttributedGraph& source,
                               const AttributedGraph& target) {
  CombinedGraph g;
  g.graph = combine(source, target);
  g.graph.validate();
  g.norm_adj = normalize(g.graph.adjacency);
  g.n_source = source.size();
  g.n_target = target.size();
  g.source_labels.assign(g.graph.labels.begin(),
                         g.graph.labels.begin() + static_cast<std::ptrdiff_t>(g.n_source));
  return g;
}

ForwardOutput forward_pretrain(const CombinedGraph& g, const ModelParams& params) {
  LossOptions opt;
  opt.use_transport = false;
  TapeModel m = build_tape(g, params, opt);
  return extract_output(m);
}

OtForwardOutput forward_ot(const CombinedGraph& g, const ModelParams& params,
                           double lambda, const SinkhornOptions& sink) {
  LossOptions opt;
  opt.use_transport = true;
  opt.lambda = lambda;
  opt.sinkhorn = sink;
  TapeModel m = build_tape(g, params, opt);
  OtForwardOutput out;
  out.out = extract_output(m);
  out.transported_source = m.tape.value(m.transported);
  out.transport = std::move(m.transport);
  return out;
}

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
  if (labels.size() != probs.rows()) {
    throw std::invalid_argument("cross_entropy: one label per row required");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw std::invalid_argument("cross_entropy: unlabeled or out-of-range label at row " +
                                  std::to_string(i));
    }
    loss -= std::log(std::max(probs(i, static_cast<std::size_t>(y)), kLogClamp));
  }
  return loss / static_cast<double>(probs.rows());
}

double joint_loss(double ce, double ot, double theta) {
  if (theta < 0.0) {
    throw std::invalid_argument("joint_loss: theta must be >= 0");
  }
  return ce + theta * ot;
}

LossGradients loss_and_gradients(const CombinedGraph& g, const ModelParams& params,
                                 const LossOptions& opt) {
  TapeModel m = build_tape(g, params, opt);
  attach_losses(m, g, opt);
  m.tape.backward(m.joint);

  LossGradients out;
  out.ce = m.tape.value(m.ce)(0, 0);
  out.ot = m.used_transport ? m.tape.value(m.ot)(0, 0) : 0.0;
  out.joint = m.tape.value(m.joint)(0, 0);
  out.used_transport = m.used_transport;
  if (m.used_transport) out.transport = std::move(m.transport);
  out.grads.reserve(m.params.size());
  for (VarId id : m.params) out.grads.push_back(m.tape.grad(id));
  return out;
}

}  // namespace otgcn
