#include "doctest.h"

#include <stdexcept>

#include <cmath>
#include <vector>

#include "otgcn/autodiff.hpp"
#include "otgcn/model.hpp"
#include "otgcn/rng.hpp"

using namespace otgcn;

namespace {

// Loop-only reference math, independent of the production kernels.
namespace oracle {

Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Matrix max0(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out.data()[i] < 0.0) out.data()[i] = 0.0;
  return out;
}

Matrix normalize_adj(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> deg(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += (i == j) ? 0.0 : a(i, j);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = ((i == j) ? 1.0 : a(i, j)) / std::sqrt(deg[i] * deg[j]);
  return out;
}

Matrix bias_rows(const Matrix& x, const Matrix& b) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
  }
  return out;
}

struct Forward {
  Matrix h_gcn, h_nft, h_concat, logits, probs;
};

Forward scripted_forward(const AttributedGraph& g, const ModelParams& p) {
  const Matrix an = normalize_adj(g.adjacency);
  Forward f;
  const Matrix g1 = max0(mm(mm(an, g.features), p.gcn_w1));
  f.h_gcn = max0(mm(mm(an, g1), p.gcn_w2));
  const Matrix l1 = max0(bias_rows(mm(g.features, p.nft_w1), p.nft_b1));
  f.h_nft = max0(bias_rows(mm(l1, p.nft_w2), p.nft_b2));
  Matrix cat(f.h_nft.rows(), f.h_nft.cols() + f.h_gcn.cols());
  for (std::size_t i = 0; i < cat.rows(); ++i) {
    for (std::size_t j = 0; j < f.h_nft.cols(); ++j) cat(i, j) = f.h_nft(i, j);
    for (std::size_t j = 0; j < f.h_gcn.cols(); ++j)
      cat(i, f.h_nft.cols() + j) = f.h_gcn(i, j);
  }
  f.h_concat = cat;
  f.logits = bias_rows(mm(cat, p.head_w), p.head_b);
  f.probs = softmax_rows(f.logits);
  return f;
}

}  // namespace oracle

AttributedGraph random_graph(std::size_t n, std::size_t m, Domain dom, Rng& rng,
                             double density = 0.4) {
  AttributedGraph g;
  g.features = Matrix(n, m);
  for (std::size_t i = 0; i < g.features.size(); ++i) {
    g.features.data()[i] = rng.uniform(-1.5, 1.5);
  }
  g.adjacency = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < density) {
        const double w = rng.uniform(0.2, 1.0);
        g.adjacency(i, j) = w;
        g.adjacency(j, i) = w;
      }
  g.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.labels[i] = static_cast<int>(rng.uniform_index(2));
  g.domains.assign(n, dom);
  return g;
}

CombinedGraph fixture(std::size_t ns, std::size_t nt, std::uint64_t seed) {
  Rng rng(seed);
  AttributedGraph s = random_graph(ns, 4, Domain::Source, rng);
  AttributedGraph t = random_graph(nt, 4, Domain::Target, rng);
  return prepare_combined(s, t);
}

// Joint loss with the transport plan held fixed; shares the forward kernels
// with the tape, differing only in how the derivative is obtained.
double frozen_plan_loss(const CombinedGraph& g, const ModelParams& p,
                        const Matrix& plan, double entropy, double lambda,
                        double theta) {
  const Matrix g1 = gcn_layer(g.graph.features, g.norm_adj, p.gcn_w1);
  const Matrix hg = gcn_layer(g1, g.norm_adj, p.gcn_w2);
  const Matrix l1 = nft_layer(g.graph.features, p.nft_w1, p.nft_b1);
  const Matrix hn = nft_layer(l1, p.nft_w2, p.nft_b2);
  const Matrix cat = concat_cols(hn, hg);
  const Matrix hs = slice_rows(cat, 0, g.n_source);
  const Matrix ht = slice_rows(cat, g.n_source, g.graph.size());
  const Matrix cost = squared_l2_cost(hs, ht);
  const double mx = max_entry(cost);
  const Matrix cost_n = mx > 0.0 ? scale(cost, 1.0 / mx) : cost;
  const double ot = frobenius_inner(plan, cost_n) - lambda * entropy;
  const Matrix transported = barycentric_map(plan, ht);
  Matrix logits = matmul(stack_rows(transported, ht), p.head_w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += p.head_b(0, j);
  const Matrix probs = row_softmax(logits);
  const double ce = cross_entropy(slice_rows(probs, 0, g.n_source), g.source_labels);
  return joint_loss(ce, ot, theta);
}

double pretrain_loss(const CombinedGraph& g, const ModelParams& p) {
  const Matrix g1 = gcn_layer(g.graph.features, g.norm_adj, p.gcn_w1);
  const Matrix hg = gcn_layer(g1, g.norm_adj, p.gcn_w2);
  const Matrix l1 = nft_layer(g.graph.features, p.nft_w1, p.nft_b1);
  const Matrix hn = nft_layer(l1, p.nft_w2, p.nft_b2);
  const Matrix cat = concat_cols(hn, hg);
  Matrix logits = matmul(cat, p.head_w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += p.head_b(0, j);
  const Matrix probs = row_softmax(logits);
  return cross_entropy(slice_rows(probs, 0, g.n_source), g.source_labels);
}

}  // namespace

TEST_CASE("gcn_layer basics") {
  SUBCASE("identity propagation leaves nonnegative input unchanged") {
    const Matrix h = Matrix::from({{1, 2}, {0, 3}});
    const NormalizedAdjacency id{Matrix::identity(2)};
    CHECK(gcn_layer(h, id, Matrix::identity(2)) == h);
  }
  SUBCASE("two-node neighborhood averaging") {
    const NormalizedAdjacency half{Matrix::from({{0.5, 0.5}, {0.5, 0.5}})};
    CHECK(gcn_layer(Matrix::from({{2}, {0}}), half, Matrix::from({{1}})) ==
          Matrix::from({{1}, {1}}));
  }
  SUBCASE("random instance matches the scripted formula") {
    Rng rng(101);
    AttributedGraph g = random_graph(6, 3, Domain::Source, rng);
    const NormalizedAdjacency na = normalize(g.adjacency);
    Matrix w(3, 2);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
    const Matrix got = gcn_layer(g.features, na, w);
    const Matrix want =
        oracle::max0(oracle::mm(oracle::mm(oracle::normalize_adj(g.adjacency), g.features), w));
    CHECK(approx_equal(got, want, 1e-12));
  }
}

TEST_CASE("nft_layer basics and structural independence") {
  const Matrix h = Matrix::from({{1, -1}});
  CHECK(nft_layer(h, Matrix::identity(2), Matrix(1, 2, 0.0)) == Matrix::from({{1, 0}}));

  const Matrix pos = Matrix::from({{2, 3}, {1, 0}});
  CHECK(nft_layer(pos, Matrix::identity(2), Matrix(1, 2, 0.0)) == pos);

  // The NFT path never touches the adjacency: outputs are bitwise equal
  // across arbitrary graph rewirings.
  Rng rng(103);
  AttributedGraph s = random_graph(5, 3, Domain::Source, rng);
  AttributedGraph t = random_graph(3, 3, Domain::Target, rng);
  CombinedGraph g1 = prepare_combined(s, t);
  AttributedGraph s2 = s;
  s2.adjacency = Matrix(5, 5);  // rewire completely
  s2.adjacency(0, 4) = s2.adjacency(4, 0) = 0.9;
  CombinedGraph g2 = prepare_combined(s2, t);

  Rng prng(7);
  ModelParams p = ModelParams::glorot(ModelVariant::Full, 3, 2, prng, 4, 4);
  const ForwardOutput f1 = forward_pretrain(g1, p);
  const ForwardOutput f2 = forward_pretrain(g2, p);
  CHECK(f1.h_nft == f2.h_nft);
  CHECK_FALSE(f1.h_gcn == f2.h_gcn);
}

TEST_CASE("forward_pretrain shapes and degenerate head") {
  CombinedGraph g = fixture(8, 4, 11);
  Rng prng(5);
  ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);

  ForwardOutput out = forward_pretrain(g, p);
  CHECK(out.probs.rows() == 12);
  CHECK(out.probs.cols() == 2);
  CHECK(out.h_concat.cols() == p.embed_width());
  for (std::size_t i = 0; i < out.probs.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < out.probs.cols(); ++j) s += out.probs(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  p.head_w = Matrix(p.embed_width(), 2);
  p.head_b = Matrix(1, 2);
  out = forward_pretrain(g, p);
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    CHECK(out.probs.data()[i] == 0.5);
  }
}

TEST_CASE("forward_pretrain matches the scripted oracle") {
  CombinedGraph g = fixture(8, 4, 13);
  Rng prng(29);
  const ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);
  const ForwardOutput got = forward_pretrain(g, p);
  const oracle::Forward want = oracle::scripted_forward(g.graph, p);
  CHECK(approx_equal(got.logits, want.logits, 1e-10));
  CHECK(approx_equal(got.probs, want.probs, 1e-10));
  CHECK(approx_equal(got.h_concat, want.h_concat, 1e-10));
}

TEST_CASE("forward_pretrain is equivariant to block-respecting permutations") {
  CombinedGraph g = fixture(8, 4, 17);
  Rng prng(31);
  const ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);
  const ForwardOutput base = forward_pretrain(g, p);

  // Permute within the source block and within the target block.
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 7, 2, 5, 4, 9, 11, 8, 10};
  AttributedGraph shuffled = induced_subgraph(g.graph, perm);
  const std::vector<std::size_t> src_idx = {0, 1, 2, 3, 4, 5, 6, 7};
  const std::vector<std::size_t> tgt_idx = {8, 9, 10, 11};
  AttributedGraph src = induced_subgraph(shuffled, src_idx);
  AttributedGraph tgt = induced_subgraph(shuffled, tgt_idx);
  CombinedGraph g2 = prepare_combined(src, tgt);
  const ForwardOutput permuted = forward_pretrain(g2, p);

  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < base.logits.cols(); ++j) {
      CHECK(std::abs(permuted.logits(i, j) - base.logits(perm[i], j)) < 1e-10);
    }
  }
}

TEST_CASE("forward_ot self-transport keeps the source rows") {
  // Target graph is a copy of the source; embeddings match row-for-row, so
  // the plan concentrates on the diagonal and transport is near-identity.
  AttributedGraph s;
  const std::size_t n = 6;
  s.features = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) s.features(i, i) = 3.0;
  s.adjacency = Matrix(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    s.adjacency(i, i + 1) = s.adjacency(i + 1, i) = 1.0;
  }
  s.labels.assign(n, 0);
  s.domains.assign(n, Domain::Source);
  AttributedGraph t = s;
  t.domains.assign(n, Domain::Target);

  CombinedGraph g = prepare_combined(s, t);
  Rng prng(37);
  const ModelParams p = ModelParams::glorot(ModelVariant::Full, n, 2, prng, 8, 8);

  const ForwardOutput pre = forward_pretrain(g, p);
  const OtForwardOutput ot = forward_ot(g, p, 0.01);

  const Matrix hs = slice_rows(pre.h_concat, 0, n);
  CHECK(approx_equal(ot.transported_source, hs, 1e-6));
  CHECK(approx_equal(slice_rows(ot.out.logits, 0, n), slice_rows(pre.logits, 0, n), 1e-6));
}

TEST_CASE("forward_ot with one source node lands on the target barycenter") {
  CombinedGraph g = fixture(1, 3, 41);
  Rng prng(43);
  const ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng, 4, 4);
  const OtForwardOutput ot = forward_ot(g, p, 0.05);
  const Matrix ht = slice_rows(ot.out.h_concat, 1, 4);
  for (std::size_t c = 0; c < ht.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 3; ++j) mean += ht(j, c) / 3.0;
    CHECK(std::abs(ot.transported_source(0, c) - mean) < 1e-9);
  }
}

TEST_CASE("forward_ot source logits match the uniform-marginal shortcut") {
  CombinedGraph g = fixture(12, 6, 47);
  Rng prng(53);
  const ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);
  // The shortcut multiplies by exactly n_s, so the plan's row sums must be
  // uniform well past the comparison tolerance.
  SinkhornOptions tight;
  tight.max_iter = 50000;
  tight.tol = 1e-13;
  const OtForwardOutput got = forward_ot(g, p, 0.03, tight);

  // Second route: scripted trunk, then n_s * P * H_t for the transported
  // block, then the affine head.
  const oracle::Forward trunk = oracle::scripted_forward(g.graph, p);
  Matrix ht(6, trunk.h_concat.cols());
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < ht.cols(); ++j) ht(i, j) = trunk.h_concat(12 + i, j);
  const Matrix shortcut = oracle::mm(scale(got.transport.plan, 12.0), ht);
  const Matrix logits = oracle::bias_rows(oracle::mm(shortcut, p.head_w), p.head_b);
  CHECK(approx_equal(slice_rows(got.out.logits, 0, 12), logits, 1e-10));
  CHECK(approx_equal(got.transported_source, shortcut, 1e-10));
}

TEST_CASE("cross_entropy values") {
  const std::vector<int> labels01 = {0, 1};
  CHECK(cross_entropy(Matrix::from({{1, 0}, {0, 1}}), labels01) == 0.0);
  const std::vector<int> zeros = {0, 0};
  CHECK(std::abs(cross_entropy(Matrix::from({{0.5, 0.5}, {0.5, 0.5}}), zeros) -
                 std::log(2.0)) < 1e-12);
  const double expected = -(std::log(0.9) + std::log(0.8)) / 2.0;
  CHECK(std::abs(cross_entropy(Matrix::from({{0.9, 0.1}, {0.2, 0.8}}), labels01) -
                 expected) < 1e-12);
  const std::vector<int> bad = {0, kUnlabeled};
  CHECK_THROWS_AS(cross_entropy(Matrix::from({{1, 0}, {0, 1}}), bad),
                  std::invalid_argument);
}

TEST_CASE("joint_loss") {
  CHECK(joint_loss(0.7, 0.3, 0.0) == 0.7);
  CHECK(joint_loss(0.5, 0.1, 10.0) == 1.5);
  Rng rng(59);
  for (int i = 0; i < 10; ++i) {
    const double ce = rng.uniform(), ot = rng.uniform(-1, 1);
    const double t1 = rng.uniform(0, 5), t2 = rng.uniform(0, 5);
    CHECK(std::abs(joint_loss(ce, ot, t1 + t2) - (joint_loss(ce, ot, t1) + t2 * ot)) <
          1e-12);
  }
  CHECK_THROWS_AS(joint_loss(1.0, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("full-model gradients match central differences (pretrain path)") {
  CombinedGraph g = fixture(8, 4, 61);
  Rng prng(67);
  ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);

  LossOptions opt;
  const LossGradients lg = loss_and_gradients(g, p, opt);

  const auto names = p.entries();
  for (std::size_t idx = 0; idx < names.size(); ++idx) {
    ModelParams probe = p;
    Matrix* slot = probe.entries()[idx].second;
    auto f = [&](const Matrix& m) {
      *slot = m;
      return pretrain_loss(g, probe);
    };
    const double err = grad_check(f, *names[idx].second, lg.grads[idx]);
    INFO("param ", names[idx].first);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("full-model gradients match central differences (frozen-plan OT path)") {
  CombinedGraph g = fixture(12, 6, 71);
  Rng prng(73);
  ModelParams p = ModelParams::glorot(ModelVariant::Full, 4, 2, prng);

  LossOptions opt;
  opt.use_transport = true;
  opt.lambda = 0.01;
  opt.theta = 10.0;
  const LossGradients lg = loss_and_gradients(g, p, opt);
  const Matrix plan = lg.transport.plan;
  const double entropy = lg.transport.entropy;

  const auto names = p.entries();
  for (std::size_t idx = 0; idx < names.size(); ++idx) {
    ModelParams probe = p;
    Matrix* slot = probe.entries()[idx].second;
    auto f = [&](const Matrix& m) {
      *slot = m;
      return frozen_plan_loss(g, probe, plan, entropy, opt.lambda, opt.theta);
    };
    const double err = grad_check(f, *names[idx].second, lg.grads[idx]);
    INFO("param ", names[idx].first);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("plain GCN variant has no NFT weights and a narrower head") {
  Rng prng(79);
  ModelParams p = ModelParams::glorot(ModelVariant::PlainGcn, 4, 2, prng);
  CHECK(p.nft_w1.empty());
  CHECK(p.embed_width() == 64);
  CHECK(p.head_w.rows() == 64);
  CHECK(p.entries().size() == 4);

  CombinedGraph g = fixture(8, 4, 83);
  const ForwardOutput out = forward_pretrain(g, p);
  CHECK(out.h_nft.empty());
  CHECK(out.h_concat == out.h_gcn);
  CHECK(out.probs.rows() == 12);
}
