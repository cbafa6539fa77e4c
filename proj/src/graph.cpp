#include "otgcn/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace otgcn {

namespace {
constexpr double kSymTol = 1e-12;
}

std::size_t AttributedGraph::count_domain(Domain d) const {
  std::size_t c = 0;
  for (Domain x : domains) {
    if (x == d) ++c;
  }
  return c;
}

void AttributedGraph::validate() const {
  const std::size_t n = size();
  if (adjacency.rows() != n || adjacency.cols() != n) {
    throw std::invalid_argument("AttributedGraph: adjacency must be n x n");
  }
  if (labels.size() != n || domains.size() != n) {
    throw std::invalid_argument("AttributedGraph: labels/domains length must equal n");
  }
  if (num_classes < 1) {
    throw std::invalid_argument("AttributedGraph: num_classes must be positive");
  }
  require_finite(features, "AttributedGraph features");
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency(i, i) != 0.0) {
      throw std::invalid_argument("AttributedGraph: nonzero diagonal at node " +
                                  std::to_string(i));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double w = adjacency(i, j);
      if (!(w >= 0.0)) {
        throw std::invalid_argument("AttributedGraph: negative or NaN edge weight");
      }
      if (std::abs(w - adjacency(j, i)) > kSymTol) {
        throw std::invalid_argument("AttributedGraph: adjacency not symmetric");
      }
    }
    if (labels[i] != kUnlabeled &&
        (labels[i] < 0 || labels[i] >= num_classes)) {
      throw std::invalid_argument("AttributedGraph: label out of range at node " +
                                  std::to_string(i));
    }
  }
}

NormalizedAdjacency normalize(const Matrix& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.cols() != n) {
    throw std::invalid_argument("normalize: adjacency must be square");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!(adjacency(i, j) >= 0.0)) {
        throw std::invalid_argument("normalize: negative or NaN edge weight");
      }
      if (std::abs(adjacency(i, j) - adjacency(j, i)) > kSymTol) {
        throw std::invalid_argument("normalize: adjacency not symmetric");
      }
    }
  }
  // Self-loop augmented degrees; positive by construction.
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d += adjacency(i, j);
    }
    degree[i] = d;
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = (i == j) ? 1.0 : adjacency(i, j);
      out(i, j) = a / std::sqrt(degree[i] * degree[j]);
    }
  }
  return NormalizedAdjacency{std::move(out)};
}

AttributedGraph combine(const AttributedGraph& source, const AttributedGraph& target) {
  if (source.feature_dim() != target.feature_dim() &&
      source.size() != 0 && target.size() != 0) {
    throw std::invalid_argument("combine: feature widths differ (" +
                                std::to_string(source.feature_dim()) + " vs " +
                                std::to_string(target.feature_dim()) + ")");
  }
  if (source.num_classes != target.num_classes &&
      source.size() != 0 && target.size() != 0) {
    throw std::invalid_argument("combine: class alphabets differ");
  }
  const std::size_t ns = source.size();
  const std::size_t nt = target.size();
  const std::size_t n = ns + nt;
  const std::size_t m = ns > 0 ? source.feature_dim() : target.feature_dim();

  AttributedGraph out;
  out.num_classes = ns > 0 ? source.num_classes : target.num_classes;
  out.features = Matrix(n, m);
  out.adjacency = Matrix(n, n);
  out.labels.resize(n);
  out.domains.resize(n);

  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.features(i, j) = source.features(i, j);
    for (std::size_t j = 0; j < ns; ++j) out.adjacency(i, j) = source.adjacency(i, j);
    out.labels[i] = source.labels[i];
    out.domains[i] = Domain::Source;
  }
  for (std::size_t i = 0; i < nt; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.features(ns + i, j) = target.features(i, j);
    for (std::size_t j = 0; j < nt; ++j) {
      out.adjacency(ns + i, ns + j) = target.adjacency(i, j);
    }
    // Hidden from training; the caller keeps the target graph for scoring.
    out.labels[ns + i] = kUnlabeled;
    out.domains[ns + i] = Domain::Target;
  }
  return out;
}

double homophily(const AttributedGraph& g) {
  const std::size_t n = g.size();
  double same = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.labels[i] == kUnlabeled) {
      throw std::invalid_argument("homophily: unlabeled node " + std::to_string(i));
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = g.adjacency(i, j);
      if (w == 0.0) continue;
      total += w;
      if (g.labels[i] == g.labels[j]) same += w;
    }
  }
  if (total == 0.0) {
    throw std::invalid_argument("homophily: graph has no edges");
  }
  return same / total;
}

AttributedGraph induced_subgraph(const AttributedGraph& g,
                                 std::span<const std::size_t> nodes) {
  const std::size_t n = nodes.size();
  AttributedGraph out;
  out.num_classes = g.num_classes;
  out.features = Matrix(n, g.feature_dim());
  out.adjacency = Matrix(n, n);
  out.labels.resize(n);
  out.domains.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gi = nodes[i];
    if (gi >= g.size()) {
      throw std::invalid_argument("induced_subgraph: node index out of range");
    }
    for (std::size_t j = 0; j < g.feature_dim(); ++j) {
      out.features(i, j) = g.features(gi, j);
    }
    out.labels[i] = g.labels[gi];
    out.domains[i] = g.domains[gi];
    for (std::size_t j = 0; j < n; ++j) {
      out.adjacency(i, j) = g.adjacency(gi, nodes[j]);
    }
  }
  return out;
}

}  // namespace otgcn
