#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "otgcn/graph.hpp"
#include "otgcn/model.hpp"

namespace otgcn {

// Recipe for a synthetic domain-shifted population-graph pair. Source
// features are class-conditional Gaussians; target features are drawn from
// the same class conditionals, rotated in a low-rank subspace and translated.
// Edges connect nodes whose cosine similarity exceeds edge_threshold, with
// the similarity as the edge weight; no cross-domain edges exist.
struct ShiftSpec {
  std::size_t n_source = 400;
  std::size_t n_target = 100;
  std::size_t feature_dim = 16;
  double class_balance = 0.5;      // fraction of class 1
  double mean_separation = 2.0;    // distance between class-conditional means
  double shift_rotation_deg = 40.0;
  double shift_translation = 1.5;
  double edge_threshold = 0.6;     // in (0, 1)
  double noise_std = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetBundle {
  AttributedGraph source;
  AttributedGraph target;
  int format_version = 1;
  std::optional<ShiftSpec> spec;              // present for generated bundles
  std::optional<double> homophily_source;     // diagnostics recorded at generation
  std::optional<double> homophily_target;
};

// Pure function of the spec: the same spec always yields a bitwise-identical
// bundle. Throws when the threshold leaves either domain edgeless.
DatasetBundle generate(const ShiftSpec& spec);

// Directory layout: meta.json, features.csv, labels.csv, domains.csv,
// edges.csv (src,dst,weight with src < dst; symmetry implied). Source nodes
// occupy global indices 0..n_s-1.
void save(const DatasetBundle& bundle, const std::string& dir);
DatasetBundle load(const std::string& dir);

// Least-squares linear probe on raw features: fit on 80% of the source,
// score held-out source and the whole target. Confirms the generated shift
// is real before any model training.
struct ProbeReport {
  double source_holdout_macro_f1 = 0.0;
  double target_macro_f1 = 0.0;
};
ProbeReport shift_probe(const DatasetBundle& bundle);

// Checkpoint: text header "OTGCN-CKPT v1" then named shape-prefixed
// float64 matrices, little-endian.
void save_checkpoint(const ModelParams& params, const std::string& path);
// expected_feature_dim >= 0 enforces the input width of the stored network.
ModelParams load_checkpoint(const std::string& path, int expected_feature_dim = -1);

}  // namespace otgcn
