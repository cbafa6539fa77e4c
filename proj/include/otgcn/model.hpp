#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otgcn/graph.hpp"
#include "otgcn/matrix.hpp"
#include "otgcn/rng.hpp"
#include "otgcn/sinkhorn.hpp"

namespace otgcn {

// Full = two GCN layers + two NFT layers, embeddings concatenated.
// PlainGcn = the two GCN layers alone (baseline ablation).
enum class ModelVariant { Full, PlainGcn };

// Weights of the network: 2 GCN layers (no bias), 2 NFT layers (with bias)
// and an affine classifier head over the concatenated embedding.
struct ModelParams {
  ModelVariant variant = ModelVariant::Full;
  int feature_dim = 0;
  int num_classes = 0;
  int hidden1 = 32;
  int hidden2 = 64;

  Matrix gcn_w1, gcn_w2;
  Matrix nft_w1, nft_b1, nft_w2, nft_b2;  // empty in PlainGcn
  Matrix head_w, head_b;

  // Uniform Glorot range +-sqrt(6/(fan_in+fan_out)); biases start at zero.
  static ModelParams glorot(ModelVariant variant, int feature_dim, int num_classes,
                            Rng& rng, int hidden1 = 32, int hidden2 = 64);

  std::size_t embed_width() const {
    return variant == ModelVariant::Full ? 2 * static_cast<std::size_t>(hidden2)
                                         : static_cast<std::size_t>(hidden2);
  }

  // Named weight matrices in a fixed order (update loops, checkpoints).
  std::vector<std::pair<std::string, Matrix*>> entries();
  std::vector<std::pair<std::string, const Matrix*>> entries() const;

  void require_finite_all() const;
};

struct ForwardOutput {
  Matrix h_gcn;    // n x hidden2
  Matrix h_nft;    // n x hidden2, empty in PlainGcn
  Matrix h_concat; // n x embed_width, pre-transport
  Matrix logits;   // n x k
  Matrix probs;    // n x k, rows sum to 1
};

// ReLU(norm_adj * h * w).
Matrix gcn_layer(const Matrix& h, const NormalizedAdjacency& norm_adj, const Matrix& w);

// ReLU(h * w + b); no graph involvement.
Matrix nft_layer(const Matrix& h, const Matrix& w, const Matrix& b);

// Combined graph with its normalization precomputed once per run.
struct CombinedGraph {
  AttributedGraph graph;
  NormalizedAdjacency norm_adj;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<int> source_labels;
};

CombinedGraph prepare_combined(const AttributedGraph& source,
                               const AttributedGraph& target);

ForwardOutput forward_pretrain(const CombinedGraph& g, const ModelParams& params);

struct OtForwardOutput {
  // logits/probs rows: transported source first, then target. h_concat is
  // the pre-transport embedding of every node.
  ForwardOutput out;
  Matrix transported_source;  // n_s x embed_width
  TransportResult transport;
};

// Forward pass through the OT layer: cost on the concatenated embeddings,
// Sinkhorn plan, barycentric transport of the source block, classifier on
// [transported source; target].
OtForwardOutput forward_ot(const CombinedGraph& g, const ModelParams& params,
                           double lambda, const SinkhornOptions& sink = {});

// Mean cross-entropy over rows; every row must carry a valid label.
double cross_entropy(const Matrix& probs, std::span<const int> labels);

// ce + theta * ot, theta >= 0.
double joint_loss(double ce, double ot, double theta);

struct LossOptions {
  bool use_transport = false;
  double lambda = 0.01;
  double theta = 10.0;
  SinkhornOptions sinkhorn;
};

struct LossGradients {
  double ce = 0.0;
  double ot = 0.0;     // 0 when transport unused
  double joint = 0.0;
  std::vector<Matrix> grads;  // parallel to ModelParams::entries()
  TransportResult transport;  // populated when transport used
  bool used_transport = false;
};

// One differentiated evaluation of the training objective. The transport
// plan is solved to tolerance, then frozen for the backward pass; gradients
// reach the embeddings through the cost matrix and the barycentric weights.
LossGradients loss_and_gradients(const CombinedGraph& g, const ModelParams& params,
                                 const LossOptions& opt);

}  // namespace otgcn
