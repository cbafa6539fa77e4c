#pragma once

#include <span>
#include <vector>

#include "otgcn/matrix.hpp"

namespace otgcn {

enum class Domain : unsigned char { Source, Target };

constexpr int kUnlabeled = -1;

// Attributed graph over one domain, or over a combined source+target
// population. Adjacency is symmetric with a zero diagonal; weights are
// nonnegative reals. labels[i] is a class in [0, num_classes) or kUnlabeled.
struct AttributedGraph {
  Matrix features;                // n x m
  Matrix adjacency;               // n x n
  std::vector<int> labels;        // length n
  std::vector<Domain> domains;    // length n
  int num_classes = 2;

  std::size_t size() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
  std::size_t count_domain(Domain d) const;

  // Throws std::invalid_argument on any violated structural invariant.
  void validate() const;
};

// D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.
struct NormalizedAdjacency {
  Matrix m;
};

// Symmetric normalization with self-loops. Input must be square, symmetric
// within 1e-12 and nonnegative.
NormalizedAdjacency normalize(const Matrix& adjacency);

// Block-diagonal union with source nodes first (indices 0..n_s-1). Target
// labels are masked to kUnlabeled in the combined view; evaluation reads
// them from the original target graph.
AttributedGraph combine(const AttributedGraph& source, const AttributedGraph& target);

// Weighted fraction of edge weight joining same-label endpoints, in [0, 1].
// Requires every node labeled and at least one edge.
double homophily(const AttributedGraph& g);

// Node-induced subgraph; node order follows `nodes`.
AttributedGraph induced_subgraph(const AttributedGraph& g,
                                 std::span<const std::size_t> nodes);

}  // namespace otgcn
