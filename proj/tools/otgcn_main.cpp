// Command-line front end: dataset generation, two-phase training, source-only
// hyperparameter tuning, evaluation and embedding export, all reproducible
// from a seed. Every run appends one JSON record to a manifest file.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "otgcn/data.hpp"
#include "otgcn/train.hpp"

using nlohmann::json;
using namespace otgcn;

namespace {

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void append_manifest(const std::string& path, const json& record) {
  std::ofstream os(path, std::ios::app | std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot append manifest " + path);
  }
  os << record.dump() << "\n";
}

json config_to_json(const ExperimentConfig& cfg) {
  return {{"lambda", cfg.lambda},
          {"theta", cfg.theta},
          {"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"pretrain_epochs", cfg.pretrain_epochs},
          {"ot_epochs", cfg.ot_epochs},
          {"folds", cfg.folds},
          {"seed", cfg.seed},
          {"use_transport", cfg.use_transport},
          {"variant", cfg.variant == ModelVariant::Full ? "full" : "plain-gcn"},
          {"sinkhorn_max_iter", cfg.sinkhorn_max_iter},
          {"sinkhorn_tol", cfg.sinkhorn_tol}};
}

// Flags win over the config file, which wins over built-in defaults.
template <typename T>
void apply_config(const CLI::App* cmd, const json& file_cfg, const std::string& key,
                  const std::string& flag, T& value) {
  if (!file_cfg.contains(key)) return;
  if (cmd->count(flag) > 0) return;
  value = file_cfg.at(key).get<T>();
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot read config file " + path);
  }
  json j;
  is >> j;
  return j;
}

struct TrainFlags {
  std::string dataset;
  std::string out = "otgcn.ckpt";
  std::string manifest = "otgcn-runs.jsonl";
  std::string config_file;
  ExperimentConfig cfg;
  bool no_transport = false;
  bool plain_gcn = false;
};

void run_train(const CLI::App* cmd, TrainFlags& f) {
  const json file_cfg = load_config_file(f.config_file);
  apply_config(cmd, file_cfg, "lambda", "--lambda", f.cfg.lambda);
  apply_config(cmd, file_cfg, "theta", "--theta", f.cfg.theta);
  apply_config(cmd, file_cfg, "learning_rate", "--lr", f.cfg.learning_rate);
  apply_config(cmd, file_cfg, "momentum", "--momentum", f.cfg.momentum);
  apply_config(cmd, file_cfg, "pretrain_epochs", "--pretrain-epochs", f.cfg.pretrain_epochs);
  apply_config(cmd, file_cfg, "ot_epochs", "--ot-epochs", f.cfg.ot_epochs);
  apply_config(cmd, file_cfg, "seed", "--seed", f.cfg.seed);

  // --plain-gcn is the classic two-layer GCN baseline: no NFT path and no
  // transport phase, both phases train on cross-entropy alone.
  f.cfg.use_transport = !f.no_transport && !f.plain_gcn;
  f.cfg.variant = f.plain_gcn ? ModelVariant::PlainGcn : ModelVariant::Full;

  const auto t0 = std::chrono::steady_clock::now();
  DatasetBundle bundle = load(f.dataset);
  RunResult r = run_pipeline(bundle.source, bundle.target, f.cfg);
  save_checkpoint(r.params, f.out);
  const auto t1 = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(t1 - t0).count();

  std::printf("target macro-F1 %.5f\n", r.report.macro_f1);
  std::printf("target micro-F1 %.5f\n", r.report.micro_f1);
  const std::vector<double>& ce_trace =
      r.ot_trace.ce.empty() ? r.pretrain_trace.ce : r.ot_trace.ce;
  if (!ce_trace.empty()) {
    std::printf("final CE %.6f\n", ce_trace.back());
  }
  if (f.cfg.use_transport && !r.ot_trace.ot.empty()) {
    std::printf("final OT loss %.6f (non-converged epochs: %d)\n",
                r.ot_trace.ot.back(), r.ot_trace.sinkhorn_failures);
  }
  std::printf("checkpoint %s\n", f.out.c_str());

  json rec = {{"command", "train"},
              {"timestamp", iso_timestamp()},
              {"dataset", f.dataset},
              {"checkpoint", f.out},
              {"config", config_to_json(f.cfg)},
              {"metrics",
               {{"target_macro_f1", r.report.macro_f1},
                {"target_micro_f1", r.report.micro_f1}}},
              {"loss_traces",
               {{"pretrain_ce", r.pretrain_trace.ce},
                {"phase2_ce", r.ot_trace.ce},
                {"phase2_ot", r.ot_trace.ot},
                {"phase2_joint", r.ot_trace.joint}}},
              {"sinkhorn_failures", r.ot_trace.sinkhorn_failures},
              {"seconds", seconds}};
  append_manifest(f.manifest, rec);
}

struct GenerateFlags {
  std::string out;
  std::string manifest = "otgcn-runs.jsonl";
  ShiftSpec spec;
};

void run_generate(GenerateFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetBundle bundle = generate(f.spec);
  save(bundle, f.out);
  ProbeReport probe = shift_probe(bundle);
  const auto t1 = std::chrono::steady_clock::now();

  std::printf("dataset %s: %zu source + %zu target nodes, %zu features\n", f.out.c_str(),
              bundle.source.size(), bundle.target.size(), bundle.source.feature_dim());
  std::printf("homophily source %.4f target %.4f\n", *bundle.homophily_source,
              *bundle.homophily_target);
  std::printf("linear probe macro-F1: held-out source %.4f, target %.4f\n",
              probe.source_holdout_macro_f1, probe.target_macro_f1);

  json rec = {{"command", "generate"},
              {"timestamp", iso_timestamp()},
              {"dataset", f.out},
              {"spec",
               {{"n_source", f.spec.n_source},
                {"n_target", f.spec.n_target},
                {"feature_dim", f.spec.feature_dim},
                {"class_balance", f.spec.class_balance},
                {"mean_separation", f.spec.mean_separation},
                {"shift_rotation_deg", f.spec.shift_rotation_deg},
                {"shift_translation", f.spec.shift_translation},
                {"edge_threshold", f.spec.edge_threshold},
                {"noise_std", f.spec.noise_std},
                {"seed", f.spec.seed}}},
              {"homophily_source", *bundle.homophily_source},
              {"homophily_target", *bundle.homophily_target},
              {"probe_source_holdout_macro_f1", probe.source_holdout_macro_f1},
              {"probe_target_macro_f1", probe.target_macro_f1},
              {"seconds", std::chrono::duration<double>(t1 - t0).count()}};
  append_manifest(f.manifest, rec);
}

struct TuneFlags {
  std::string dataset;
  std::string manifest = "otgcn-runs.jsonl";
  ExperimentConfig cfg;
};

void run_tune(TuneFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  DatasetBundle bundle = load(f.dataset);
  // Only the source graph crosses this call boundary.
  TuneResult result = tune(bundle.source, f.cfg);
  const auto t1 = std::chrono::steady_clock::now();

  std::printf("%-8s %-8s %-8s %s\n", "lambda", "theta", "lr", "mean macro-F1");
  for (const TuneCell& cell : result.table) {
    std::printf("%-8g %-8g %-8g %.5f\n", cell.lambda, cell.theta, cell.learning_rate,
                cell.mean_macro_f1);
  }
  std::printf("best: --lambda %g --theta %g --lr %g\n", result.lambda, result.theta,
              result.learning_rate);

  json table = json::array();
  for (const TuneCell& cell : result.table) {
    table.push_back({{"lambda", cell.lambda},
                     {"theta", cell.theta},
                     {"learning_rate", cell.learning_rate},
                     {"mean_macro_f1", cell.mean_macro_f1},
                     {"fold_macro_f1", cell.fold_macro_f1}});
  }
  json rec = {{"command", "tune"},
              {"timestamp", iso_timestamp()},
              {"dataset", f.dataset},
              {"config", config_to_json(f.cfg)},
              {"grid", table},
              {"best",
               {{"lambda", result.lambda},
                {"theta", result.theta},
                {"learning_rate", result.learning_rate},
                {"mean_macro_f1", result.mean_macro_f1}}},
              {"seconds", std::chrono::duration<double>(t1 - t0).count()}};
  append_manifest(f.manifest, rec);
}

struct EvaluateFlags {
  std::string dataset;
  std::string checkpoint;
  bool no_transport = false;
  double lambda = 0.01;
};

void run_evaluate(const EvaluateFlags& f) {
  DatasetBundle bundle = load(f.dataset);
  ModelParams params =
      load_checkpoint(f.checkpoint, static_cast<int>(bundle.source.feature_dim()));
  CombinedGraph g = prepare_combined(bundle.source, bundle.target);
  std::vector<int> all = predict(g, params, !f.no_transport, f.lambda);
  std::vector<int> target_pred(all.begin() + static_cast<std::ptrdiff_t>(g.n_source),
                               all.end());
  EvalReport rep = evaluate(target_pred, bundle.target.labels);
  std::printf("target macro-F1 %.5f\n", rep.macro_f1);
  std::printf("target micro-F1 %.5f\n", rep.micro_f1);
  for (std::size_t c = 0; c < rep.f1.size(); ++c) {
    std::printf("class %zu: precision %.5f recall %.5f f1 %.5f\n", c, rep.precision[c],
                rep.recall[c], rep.f1[c]);
  }
}

struct ExportFlags {
  std::string dataset;
  std::string checkpoint;
  std::string out_pre = "embeddings_pre.csv";
  std::string out_post = "embeddings_post.csv";
  double lambda = 0.01;
};

void write_embedding_csv(const std::string& path, const Matrix& emb,
                         const DatasetBundle& bundle) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot write " + path);
  }
  os << "node_id,domain,label";
  for (std::size_t d = 0; d < emb.cols(); ++d) os << ",dim_" << d;
  os << "\n";
  const std::size_t ns = bundle.source.size();
  char buf[32];
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const bool is_source = i < ns;
    const int label = is_source ? bundle.source.labels[i]
                                : bundle.target.labels[i - ns];
    os << i << "," << (is_source ? "source" : "target") << "," << label;
    for (std::size_t d = 0; d < emb.cols(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", emb(i, d));
      os << "," << buf;
    }
    os << "\n";
  }
}

void run_export(const ExportFlags& f) {
  DatasetBundle bundle = load(f.dataset);
  ModelParams params =
      load_checkpoint(f.checkpoint, static_cast<int>(bundle.source.feature_dim()));
  CombinedGraph g = prepare_combined(bundle.source, bundle.target);

  OtForwardOutput fwd = forward_ot(g, params, f.lambda);
  write_embedding_csv(f.out_pre, fwd.out.h_concat, bundle);

  // Post-transport: source rows replaced by their barycentric images.
  Matrix post = fwd.out.h_concat;
  for (std::size_t i = 0; i < g.n_source; ++i) {
    for (std::size_t d = 0; d < post.cols(); ++d) {
      post(i, d) = fwd.transported_source(i, d);
    }
  }
  write_embedding_csv(f.out_post, post, bundle);
  std::printf("wrote %s and %s (%zu rows, %zu dims)\n", f.out_pre.c_str(),
              f.out_post.c_str(), post.rows(), post.cols());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OTGCN: cross-network node classification with GCN embeddings and "
               "entropic optimal transport"};
  app.require_subcommand(1);

  GenerateFlags gen;
  CLI::App* cmd_gen = app.add_subcommand(
      "generate", "Generate a synthetic domain-shifted population-graph dataset");
  cmd_gen->add_option("--out", gen.out, "Output dataset directory")->required();
  cmd_gen->add_option("--seed", gen.spec.seed, "Generation seed (bitwise reproducible)");
  cmd_gen->add_option("--n-source", gen.spec.n_source, "Source node count");
  cmd_gen->add_option("--n-target", gen.spec.n_target, "Target node count");
  cmd_gen->add_option("--feature-dim", gen.spec.feature_dim, "Feature dimension");
  cmd_gen->add_option("--separation", gen.spec.mean_separation,
                      "Distance between class-conditional feature means");
  cmd_gen->add_option("--rotation-deg", gen.spec.shift_rotation_deg,
                      "Target-domain rotation angle in the shift plane, degrees");
  cmd_gen->add_option("--translation", gen.spec.shift_translation,
                      "Target-domain translation distance along the rotated class axis");
  cmd_gen->add_option("--edge-threshold", gen.spec.edge_threshold,
                      "Cosine similarity above which an edge is placed (weight = similarity)");
  cmd_gen->add_option("--noise-std", gen.spec.noise_std, "Feature noise standard deviation");
  cmd_gen->add_option("--class-balance", gen.spec.class_balance, "Fraction of class 1");
  cmd_gen->add_option("--manifest", gen.manifest, "Manifest file to append the run record to");

  TrainFlags tr;
  CLI::App* cmd_tr = app.add_subcommand(
      "train", "Pretrain on cross-entropy, then joint cross-entropy + transport training");
  cmd_tr->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  cmd_tr->add_option("--out", tr.out, "Checkpoint output path");
  cmd_tr->add_option("--seed", tr.cfg.seed, "Run seed (weights; reruns are bit-identical)");
  cmd_tr->add_option("--lambda", tr.cfg.lambda,
                     "Entropic regularization weight of the Sinkhorn solver");
  cmd_tr->add_option("--theta", tr.cfg.theta,
                     "Weight of the transport loss in the joint objective; 0 trains on "
                     "cross-entropy alone while transport is still applied in the forward "
                     "pass, so it tracks --no-transport only up to optimizer noise");
  cmd_tr->add_option("--lr", tr.cfg.learning_rate, "Gradient-descent learning rate");
  cmd_tr->add_option("--momentum", tr.cfg.momentum, "Optional momentum, 0 = plain descent");
  cmd_tr->add_option("--pretrain-epochs", tr.cfg.pretrain_epochs, "Phase-one epochs");
  cmd_tr->add_option("--ot-epochs", tr.cfg.ot_epochs, "Phase-two epochs");
  cmd_tr->add_flag("--no-transport", tr.no_transport,
                   "Ablation: skip the transport layer, train both phases on cross-entropy");
  cmd_tr->add_flag("--plain-gcn", tr.plain_gcn,
                   "Baseline: GCN layers only, no node-feature-transformation path and "
                   "no transport phase");
  cmd_tr->add_option("--config", tr.config_file,
                     "JSON config file; flags take precedence over file values");
  cmd_tr->add_option("--manifest", tr.manifest, "Manifest file to append the run record to");

  TuneFlags tu;
  CLI::App* cmd_tu = app.add_subcommand(
      "tune", "Source-only k-fold grid search over lambda, theta and learning rate");
  cmd_tu->add_option("--dataset", tu.dataset,
                     "Dataset directory (only its source graph is read)")
      ->required();
  cmd_tu->add_option("--folds", tu.cfg.folds, "Cross-validation fold count");
  cmd_tu->add_option("--seed", tu.cfg.seed, "Fold-assignment and training seed");
  cmd_tu->add_option("--lambdas", tu.cfg.candidate_lambdas,
                     "Candidate entropic regularization weights");
  cmd_tu->add_option("--thetas", tu.cfg.candidate_thetas, "Candidate transport-loss weights");
  cmd_tu->add_option("--lrs", tu.cfg.candidate_lrs, "Candidate learning rates");
  cmd_tu->add_option("--pretrain-epochs", tu.cfg.pretrain_epochs, "Phase-one epochs per fold");
  cmd_tu->add_option("--ot-epochs", tu.cfg.ot_epochs, "Phase-two epochs per fold");
  cmd_tu->add_option("--jobs", tu.cfg.jobs, "Parallel workers (0 = hardware)");
  cmd_tu->add_option("--manifest", tu.manifest, "Manifest file to append the run record to");

  EvaluateFlags ev;
  CLI::App* cmd_ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset's target");
  cmd_ev->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  cmd_ev->add_flag("--no-transport", ev.no_transport, "Score the untransported forward pass");
  cmd_ev->add_option("--lambda", ev.lambda, "Entropic regularization for the transport pass");

  ExportFlags ex;
  CLI::App* cmd_ex = app.add_subcommand(
      "export-embeddings",
      "Write pre- and post-transport embeddings as CSV (node_id,domain,label,dim_*)");
  cmd_ex->add_option("--dataset", ex.dataset, "Dataset directory")->required();
  cmd_ex->add_option("--checkpoint", ex.checkpoint, "Checkpoint path")->required();
  cmd_ex->add_option("--out-pre", ex.out_pre, "Pre-transport embedding CSV");
  cmd_ex->add_option("--out-post", ex.out_post, "Post-transport embedding CSV");
  cmd_ex->add_option("--lambda", ex.lambda, "Entropic regularization for the transport pass");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (cmd_gen->parsed()) run_generate(gen);
    if (cmd_tr->parsed()) run_train(cmd_tr, tr);
    if (cmd_tu->parsed()) run_tune(tu);
    if (cmd_ev->parsed()) run_evaluate(ev);
    if (cmd_ex->parsed()) run_export(ex);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
