#include "otgcn/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "otgcn/rng.hpp"

namespace otgcn {

namespace {

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs)
                              : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

class SgdState {
 public:
  explicit SgdState(ModelParams& params) : params_(&params) {
    for (auto& [name, mat] : params.entries()) {
      velocity_.emplace_back(mat->rows(), mat->cols());
    }
  }

  void step(const std::vector<Matrix>& grads, double lr, double momentum) {
    auto entries = params_->entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Matrix& w = *entries[p].second;
      Matrix& v = velocity_[p];
      const Matrix& g = grads[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        v.data()[i] = momentum * v.data()[i] - lr * g.data()[i];
        w.data()[i] += v.data()[i];
      }
    }
  }

 private:
  ModelParams* params_;
  std::vector<Matrix> velocity_;
};

void descend_ce(const CombinedGraph& g, ModelParams& params, int epochs,
                const ExperimentConfig& cfg, TrainTrace* trace, const char* phase) {
  SgdState sgd(params);
  LossOptions opt;
  opt.use_transport = false;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    LossGradients lg = loss_and_gradients(g, params, opt);
    if (!std::isfinite(lg.joint)) {
      throw std::runtime_error(std::string(phase) + ": non-finite loss at epoch " +
                               std::to_string(epoch));
    }
    sgd.step(lg.grads, cfg.learning_rate, cfg.momentum);
    params.require_finite_all();
    if (trace) {
      trace->ce.push_back(lg.ce);
      trace->joint.push_back(lg.joint);
    }
  }
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("ExperimentConfig: learning_rate must be >= 0");
  }
  if (pretrain_epochs < 0 || ot_epochs < 0) {
    throw std::invalid_argument("ExperimentConfig: epoch counts must be >= 0");
  }
  if (folds < 2) {
    throw std::invalid_argument("ExperimentConfig: folds must be >= 2");
  }
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("ExperimentConfig: lambda must be > 0");
  }
  if (theta < 0.0) {
    throw std::invalid_argument("ExperimentConfig: theta must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("ExperimentConfig: momentum must be in [0, 1)");
  }
}

ModelParams pretrain(const CombinedGraph& g, const ExperimentConfig& cfg,
                     TrainTrace* trace) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams params = ModelParams::glorot(cfg.variant, static_cast<int>(g.graph.feature_dim()),
                                           g.graph.num_classes, rng, cfg.hidden1, cfg.hidden2);
  descend_ce(g, params, cfg.pretrain_epochs, cfg, trace, "pretrain");
  return params;
}

void continue_pretrain(const CombinedGraph& g, ModelParams& params, int epochs,
                       const ExperimentConfig& cfg, TrainTrace* trace) {
  descend_ce(g, params, epochs, cfg, trace, "continue_pretrain");
}

void train_ot(const CombinedGraph& g, ModelParams& params, const ExperimentConfig& cfg,
              TrainTrace* trace) {
  cfg.validate();
  SgdState sgd(params);
  std::vector<double> warm_u, warm_v;
  for (int epoch = 0; epoch < cfg.ot_epochs; ++epoch) {
    LossOptions opt;
    opt.use_transport = true;
    opt.lambda = cfg.lambda;
    opt.theta = cfg.theta;
    opt.sinkhorn.max_iter = cfg.sinkhorn_max_iter;
    opt.sinkhorn.tol = cfg.sinkhorn_tol;
    if (cfg.warm_start_potentials && !warm_u.empty()) {
      opt.sinkhorn.warm_u = &warm_u;
      opt.sinkhorn.warm_v = &warm_v;
    }
    LossGradients lg = loss_and_gradients(g, params, opt);
    if (!std::isfinite(lg.joint)) {
      throw std::runtime_error("train_ot: non-finite loss at epoch " + std::to_string(epoch));
    }
    if (!lg.transport.converged && trace) ++trace->sinkhorn_failures;
    if (cfg.warm_start_potentials) {
      warm_u = lg.transport.potential_u;
      warm_v = lg.transport.potential_v;
    }
    sgd.step(lg.grads, cfg.learning_rate, cfg.momentum);
    params.require_finite_all();
    if (trace) {
      trace->ce.push_back(lg.ce);
      trace->ot.push_back(lg.ot);
      trace->joint.push_back(lg.joint);
    }
  }
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const CombinedGraph& g, const ModelParams& params,
                         bool use_transport, double lambda, const SinkhornOptions& sink) {
  if (use_transport) {
    return argmax_rows(forward_ot(g, params, lambda, sink).out.probs);
  }
  return argmax_rows(forward_pretrain(g, params).probs);
}

EvalReport evaluate(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("evaluate: prediction/truth length mismatch");
  }
  if (truth.empty()) {
    throw std::invalid_argument("evaluate: empty inputs");
  }
  int k = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predictions[i] < 0) {
      throw std::invalid_argument("evaluate: labels must be nonnegative classes");
    }
    k = std::max({k, truth[i] + 1, predictions[i] + 1});
  }

  EvalReport rep;
  rep.confusion.assign(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++rep.confusion[truth[i]][predictions[i]];
  }

  long correct = 0;
  double macro = 0.0;
  rep.precision.resize(k);
  rep.recall.resize(k);
  rep.f1.resize(k);
  for (int c = 0; c < k; ++c) {
    long tp = rep.confusion[c][c];
    long fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += rep.confusion[o][c];
      fn += rep.confusion[c][o];
    }
    correct += tp;
    const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    rep.precision[c] = prec;
    rep.recall[c] = rec;
    rep.f1[c] = f1;
    macro += f1;
  }
  rep.macro_f1 = macro / static_cast<double>(k);
  // Globally pooled F1; for single-label predictions FP and FN totals agree,
  // so this reduces to accuracy.
  rep.micro_f1 = static_cast<double>(correct) / static_cast<double>(truth.size());
  return rep;
}

RunResult run_pipeline(const AttributedGraph& source, const AttributedGraph& target,
                       const ExperimentConfig& cfg) {
  cfg.validate();
  CombinedGraph g = prepare_combined(source, target);

  RunResult r;
  r.params = pretrain(g, cfg, &r.pretrain_trace);
  if (cfg.use_transport) {
    train_ot(g, r.params, cfg, &r.ot_trace);
  } else {
    continue_pretrain(g, r.params, cfg.ot_epochs, cfg, &r.ot_trace);
  }

  SinkhornOptions sink;
  sink.max_iter = cfg.sinkhorn_max_iter;
  sink.tol = cfg.sinkhorn_tol;
  std::vector<int> all = predict(g, r.params, cfg.use_transport, cfg.lambda, sink);
  r.target_predictions.assign(all.begin() + static_cast<std::ptrdiff_t>(g.n_source),
                              all.end());
  r.report = evaluate(r.target_predictions, target.labels);
  r.report.seed = cfg.seed;
  return r;
}

TuneResult tune(const AttributedGraph& source, const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.candidate_lambdas.empty() || cfg.candidate_thetas.empty() ||
      cfg.candidate_lrs.empty()) {
    throw std::invalid_argument("tune: empty hyperparameter grid");
  }
  const std::size_t n = source.size();
  if (static_cast<std::size_t>(cfg.folds) > n) {
    throw std::invalid_argument("tune: more folds than source nodes");
  }

  // Deterministic fold assignment from the seed.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng fold_rng(mix_seed(cfg.seed, 0xF01D5));
  fold_rng.shuffle(order);
  const auto folds = static_cast<std::size_t>(cfg.folds);
  std::vector<std::vector<std::size_t>> fold_nodes(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds;
    const std::size_t hi = (f + 1) * n / folds;
    fold_nodes[f].assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
  }

  std::vector<TuneCell> table;
  for (double lam : cfg.candidate_lambdas) {
    for (double th : cfg.candidate_thetas) {
      for (double lr : cfg.candidate_lrs) {
        TuneCell cell;
        cell.lambda = lam;
        cell.theta = th;
        cell.learning_rate = lr;
        cell.fold_macro_f1.assign(folds, 0.0);
        table.push_back(std::move(cell));
      }
    }
  }

  const std::size_t units = table.size() * folds;
  parallel_for(units, cfg.jobs, [&](std::size_t unit) {
    const std::size_t cell_idx = unit / folds;
    const std::size_t f = unit % folds;
    const TuneCell& cell = table[cell_idx];

    std::vector<std::size_t> train_nodes;
    train_nodes.reserve(n - fold_nodes[f].size());
    std::vector<bool> held(n, false);
    for (std::size_t i : fold_nodes[f]) held[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (!held[i]) train_nodes.push_back(i);
    }

    AttributedGraph pseudo_source = induced_subgraph(source, train_nodes);
    AttributedGraph pseudo_target = induced_subgraph(source, fold_nodes[f]);
    for (Domain& d : pseudo_target.domains) d = Domain::Target;

    ExperimentConfig unit_cfg = cfg;
    unit_cfg.lambda = cell.lambda;
    unit_cfg.theta = cell.theta;
    unit_cfg.learning_rate = cell.learning_rate;
    unit_cfg.seed = mix_seed(cfg.seed, unit);

    RunResult r = run_pipeline(pseudo_source, pseudo_target, unit_cfg);
    table[cell_idx].fold_macro_f1[f] = r.report.macro_f1;
  });

  TuneResult best;
  best.table = std::move(table);
  double best_score = -1.0;
  for (TuneCell& cell : best.table) {
    double mean = 0.0;
    for (double x : cell.fold_macro_f1) mean += x;
    mean /= static_cast<double>(folds);
    cell.mean_macro_f1 = mean;
    if (mean > best_score) {
      best_score = mean;
      best.lambda = cell.lambda;
      best.theta = cell.theta;
      best.learning_rate = cell.learning_rate;
      best.mean_macro_f1 = mean;
    }
  }
  return best;
}

MultiSeedSummary multi_seed_run(const AttributedGraph& source,
                                const AttributedGraph& target,
                                const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.seeds.empty()) {
    throw std::invalid_argument("multi_seed_run: at least one seed required");
  }
  MultiSeedSummary summary;
  summary.runs.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.jobs, [&](std::size_t i) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.seed = cfg.seeds[i];
    summary.runs[i] = run_pipeline(source, target, run_cfg).report;
  });

  std::vector<double> macros, micros;
  for (const EvalReport& r : summary.runs) {
    macros.push_back(r.macro_f1);
    micros.push_back(r.micro_f1);
  }
  summary.macro_mean = std::accumulate(macros.begin(), macros.end(), 0.0) /
                       static_cast<double>(macros.size());
  summary.micro_mean = std::accumulate(micros.begin(), micros.end(), 0.0) /
                       static_cast<double>(micros.size());
  summary.macro_std = sample_std(macros, summary.macro_mean);
  summary.micro_std = sample_std(micros, summary.micro_mean);
  return summary;
}

}  // namespace otgcn
