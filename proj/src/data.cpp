#include "otgcn/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "otgcn/rng.hpp"
#include "otgcn/train.hpp"

namespace otgcn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr const char* kCheckpointHeader = "OTGCN-CKPT v1\n";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void load_error(const std::string& file, const std::string& why) {
  throw std::runtime_error("load: " + file + ": " + why);
}

std::vector<double> unit_normal_vector(std::size_t m, Rng& rng) {
  std::vector<double> v(m);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (double& x : v) x /= norm;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Thresholded weighted cosine-similarity adjacency within one domain.
Matrix cosine_adjacency(const Matrix& features, double threshold) {
  const std::size_t n = features.rows();
  Matrix adj(n, n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(dot(features.row(i), features.row(i)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      const double cosine = std::min(
          1.0, dot(features.row(i), features.row(j)) / (norms[i] * norms[j]));
      if (cosine > threshold) {
        adj(i, j) = cosine;
        adj(j, i) = cosine;
      }
    }
  }
  return adj;
}

std::vector<int> balanced_labels(std::size_t n, double balance, Rng& rng) {
  const auto n1 = static_cast<std::size_t>(std::lround(static_cast<double>(n) * balance));
  std::vector<int> labels(n, 0);
  for (std::size_t i = n - std::min(n1, n); i < n; ++i) labels[i] = 1;
  rng.shuffle(labels);
  return labels;
}

// Solve (A^T A + ridge I) w = A^T y by Gaussian elimination; A gets an
// appended intercept column.
std::vector<double> least_squares_fit(const Matrix& x, const std::vector<double>& y) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols() + 1;
  std::vector<std::vector<double>> ata(d, std::vector<double>(d, 0.0));
  std::vector<double> aty(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> row(d, 1.0);
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] = x(r, c);
    for (std::size_t i = 0; i < d; ++i) {
      aty[i] += row[i] * y[r];
      for (std::size_t j = 0; j < d; ++j) ata[i][j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) ata[i][i] += 1e-8;

  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r) {
      if (std::abs(ata[r][col]) > std::abs(ata[pivot][col])) pivot = r;
    }
    std::swap(ata[col], ata[pivot]);
    std::swap(aty[col], aty[pivot]);
    const double p = ata[col][col];
    for (std::size_t r = col + 1; r < d; ++r) {
      const double f = ata[r][col] / p;
      for (std::size_t c = col; c < d; ++c) ata[r][c] -= f * ata[col][c];
      aty[r] -= f * aty[col];
    }
  }
  std::vector<double> w(d, 0.0);
  for (std::size_t i = d; i-- > 0;) {
    double s = aty[i];
    for (std::size_t j = i + 1; j < d; ++j) s -= ata[i][j] * w[j];
    w[i] = s / ata[i][i];
  }
  return w;
}

std::vector<int> probe_predict(const Matrix& x, const std::vector<double>& w) {
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = w[x.cols()];
    for (std::size_t c = 0; c < x.cols(); ++c) s += w[c] * x(i, c);
    out[i] = s > 0.0 ? 1 : 0;
  }
  return out;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) load_error(path, "truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) load_error(path, "truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64(std::istream& is, const std::string& path) {
  const std::uint64_t bits = read_u64(is, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void ShiftSpec::validate() const {
  if (n_source < 2 || n_target < 2) {
    throw std::invalid_argument("ShiftSpec: n_source and n_target must be >= 2");
  }
  if (feature_dim < 2) {
    throw std::invalid_argument("ShiftSpec: feature_dim must be >= 2");
  }
  if (!(edge_threshold > 0.0 && edge_threshold < 1.0)) {
    throw std::invalid_argument("ShiftSpec: edge_threshold must lie in (0, 1)");
  }
  if (!(class_balance > 0.0 && class_balance < 1.0)) {
    throw std::invalid_argument("ShiftSpec: class_balance must lie in (0, 1)");
  }
  if (!(noise_std >= 0.0) || !(mean_separation >= 0.0) || !(shift_translation >= 0.0)) {
    throw std::invalid_argument("ShiftSpec: negative magnitude");
  }
}

DatasetBundle generate(const ShiftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t m = spec.feature_dim;

  // Class geometry: means sit at +-separation/2 along a random axis.
  const std::vector<double> axis = unit_normal_vector(m, rng);

  // Shift geometry. The rotation plane contains the class axis and the
  // translation follows the rotated axis, so the stated angle and distance
  // are the displacement the source-fitted decision boundary actually sees;
  // a direction drawn isotropically in R^m would be almost orthogonal to the
  // class axis and the drift would vanish at realistic dimensions.
  std::vector<double> ortho = unit_normal_vector(m, rng);
  {
    const double c = dot(ortho, axis);
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      ortho[i] -= c * axis[i];
      norm += ortho[i] * ortho[i];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate draw; pick any coordinate direction off the axis.
      ortho.assign(m, 0.0);
      ortho[1] = 1.0;
    } else {
      for (double& x : ortho) x /= norm;
    }
  }

  const double angle = spec.shift_rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);

  auto rotate = [&](std::vector<double>& x) {
    const double a = dot(x, axis);
    const double b = dot(x, ortho);
    const double da = (cs - 1.0) * a - sn * b;
    const double db = sn * a + (cs - 1.0) * b;
    for (std::size_t i = 0; i < m; ++i) x[i] += da * axis[i] + db * ortho[i];
  };

  std::vector<double> translation(m);
  for (std::size_t i = 0; i < m; ++i) translation[i] = axis[i];
  rotate(translation);

  auto sample_features = [&](const std::vector<int>& labels, bool shifted) {
    Matrix x(labels.size(), m);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::vector<double> row(m);
      const double sign = labels[i] == 1 ? 0.5 : -0.5;
      for (std::size_t c = 0; c < m; ++c) {
        row[c] = sign * spec.mean_separation * axis[c] +
                 spec.noise_std * rng.normal();
      }
      if (shifted) {
        rotate(row);
        for (std::size_t c = 0; c < m; ++c) {
          row[c] += spec.shift_translation * translation[c];
        }
      }
      for (std::size_t c = 0; c < m; ++c) x(i, c) = row[c];
    }
    return x;
  };

  DatasetBundle bundle;
  bundle.spec = spec;
  bundle.format_version = kFormatVersion;

  std::vector<int> source_labels = balanced_labels(spec.n_source, spec.class_balance, rng);
  std::vector<int> target_labels = balanced_labels(spec.n_target, spec.class_balance, rng);

  bundle.source.features = sample_features(source_labels, false);
  bundle.target.features = sample_features(target_labels, true);
  bundle.source.labels = std::move(source_labels);
  bundle.target.labels = std::move(target_labels);
  bundle.source.domains.assign(spec.n_source, Domain::Source);
  bundle.target.domains.assign(spec.n_target, Domain::Target);
  bundle.source.num_classes = 2;
  bundle.target.num_classes = 2;

  bundle.source.adjacency = cosine_adjacency(bundle.source.features, spec.edge_threshold);
  bundle.target.adjacency = cosine_adjacency(bundle.target.features, spec.edge_threshold);

  for (const auto* g : {&bundle.source, &bundle.target}) {
    bool any_edge = false;
    for (std::size_t i = 0; i < g->adjacency.size() && !any_edge; ++i) {
      any_edge = g->adjacency.data()[i] > 0.0;
    }
    if (!any_edge) {
      throw std::runtime_error(
          "generate: graph has no edges at edge_threshold=" +
          fmt_double(spec.edge_threshold) + "; lower the threshold");
    }
  }

  bundle.homophily_source = homophily(bundle.source);
  bundle.homophily_target = homophily(bundle.target);
  bundle.source.validate();
  bundle.target.validate();
  return bundle;
}

void save(const DatasetBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);
  const std::size_t ns = bundle.source.size();
  const std::size_t nt = bundle.target.size();

  json meta;
  meta["format_version"] = bundle.format_version;
  meta["n_source"] = ns;
  meta["n_target"] = nt;
  meta["feature_dim"] = bundle.source.feature_dim();
  meta["num_classes"] = bundle.source.num_classes;
  if (bundle.spec) {
    const ShiftSpec& s = *bundle.spec;
    meta["spec"] = {{"n_source", s.n_source},
                    {"n_target", s.n_target},
                    {"feature_dim", s.feature_dim},
                    {"class_balance", s.class_balance},
                    {"mean_separation", s.mean_separation},
                    {"shift_rotation_deg", s.shift_rotation_deg},
                    {"shift_translation", s.shift_translation},
                    {"edge_threshold", s.edge_threshold},
                    {"noise_std", s.noise_std},
                    {"seed", s.seed}};
  }
  if (bundle.homophily_source) meta["homophily_source"] = *bundle.homophily_source;
  if (bundle.homophily_target) meta["homophily_target"] = *bundle.homophily_target;
  {
    std::ofstream os(fs::path(dir) / "meta.json", std::ios::binary);
    os << meta.dump(2) << "\n";
  }

  {
    std::ofstream os(fs::path(dir) / "features.csv", std::ios::binary);
    auto dump_rows = [&os](const Matrix& x) {
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
          if (j) os << ",";
          os << fmt_double(x(i, j));
        }
        os << "\n";
      }
    };
    dump_rows(bundle.source.features);
    dump_rows(bundle.target.features);
  }
  {
    std::ofstream os(fs::path(dir) / "labels.csv", std::ios::binary);
    for (int y : bundle.source.labels) os << y << "\n";
    for (int y : bundle.target.labels) os << y << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "domains.csv", std::ios::binary);
    for (std::size_t i = 0; i < ns; ++i) os << "source\n";
    for (std::size_t i = 0; i < nt; ++i) os << "target\n";
  }
  {
    std::ofstream os(fs::path(dir) / "edges.csv", std::ios::binary);
    os << "src,dst,weight\n";
    auto dump_edges = [&os](const Matrix& adj, std::size_t offset) {
      for (std::size_t i = 0; i < adj.rows(); ++i) {
        for (std::size_t j = i + 1; j < adj.cols(); ++j) {
          if (adj(i, j) > 0.0) {
            os << (offset + i) << "," << (offset + j) << ","
               << fmt_double(adj(i, j)) << "\n";
          }
        }
      }
    };
    dump_edges(bundle.source.adjacency, 0);
    dump_edges(bundle.target.adjacency, ns);
  }
}

DatasetBundle load(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "meta.json")) load_error("meta.json", "missing file");

  json meta;
  try {
    std::ifstream is(root / "meta.json", std::ios::binary);
    is >> meta;
  } catch (const std::exception& e) {
    load_error("meta.json", e.what());
  }
  if (!meta.contains("format_version") || meta["format_version"].get<int>() != kFormatVersion) {
    load_error("meta.json", "unsupported or missing format_version (expected " +
                                std::to_string(kFormatVersion) + ")");
  }
  const auto ns = meta.at("n_source").get<std::size_t>();
  const auto nt = meta.at("n_target").get<std::size_t>();
  const auto m = meta.at("feature_dim").get<std::size_t>();
  const auto k = meta.at("num_classes").get<int>();
  const std::size_t n = ns + nt;

  DatasetBundle bundle;
  bundle.format_version = kFormatVersion;
  if (meta.contains("spec")) {
    const json& s = meta["spec"];
    ShiftSpec spec;
    spec.n_source = s.at("n_source").get<std::size_t>();
    spec.n_target = s.at("n_target").get<std::size_t>();
    spec.feature_dim = s.at("feature_dim").get<std::size_t>();
    spec.class_balance = s.at("class_balance").get<double>();
    spec.mean_separation = s.at("mean_separation").get<double>();
    spec.shift_rotation_deg = s.at("shift_rotation_deg").get<double>();
    spec.shift_translation = s.at("shift_translation").get<double>();
    spec.edge_threshold = s.at("edge_threshold").get<double>();
    spec.noise_std = s.at("noise_std").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    bundle.spec = spec;
  }
  if (meta.contains("homophily_source")) {
    bundle.homophily_source = meta["homophily_source"].get<double>();
  }
  if (meta.contains("homophily_target")) {
    bundle.homophily_target = meta["homophily_target"].get<double>();
  }

  Matrix features(n, m);
  {
    std::ifstream is(root / "features.csv", std::ios::binary);
    if (!is) load_error("features.csv", "missing file");
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) load_error("features.csv", "truncated at row " + std::to_string(i));
      std::stringstream ss(line);
      std::string cell;
      for (std::size_t j = 0; j < m; ++j) {
        if (!std::getline(ss, cell, ',')) {
          load_error("features.csv", "row " + std::to_string(i) + " has fewer than " +
                                         std::to_string(m) + " columns");
        }
        try {
          features(i, j) = std::stod(cell);
        } catch (const std::exception&) {
          load_error("features.csv", "bad number '" + cell + "' at row " + std::to_string(i));
        }
      }
    }
  }
  if (!all_finite(features)) load_error("features.csv", "non-finite feature");

  std::vector<int> labels(n);
  {
    std::ifstream is(root / "labels.csv", std::ios::binary);
    if (!is) load_error("labels.csv", "missing file");
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) load_error("labels.csv", "truncated at row " + std::to_string(i));
      try {
        labels[i] = std::stoi(line);
      } catch (const std::exception&) {
        load_error("labels.csv", "bad label '" + line + "'");
      }
      if (labels[i] != kUnlabeled && (labels[i] < 0 || labels[i] >= k)) {
        load_error("labels.csv", "label out of range at row " + std::to_string(i));
      }
    }
  }

  {
    std::ifstream is(root / "domains.csv", std::ios::binary);
    if (!is) load_error("domains.csv", "missing file");
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) load_error("domains.csv", "truncated at row " + std::to_string(i));
      const bool should_be_source = i < ns;
      if (line != (should_be_source ? "source" : "target")) {
        load_error("domains.csv", "domain tag at row " + std::to_string(i) +
                                      " does not match the source-first block layout");
      }
    }
  }

  Matrix adj_s(ns, ns), adj_t(nt, nt);
  {
    std::ifstream is(root / "edges.csv", std::ios::binary);
    if (!is) load_error("edges.csv", "missing file");
    std::string line;
    if (!std::getline(is, line) || line != "src,dst,weight") {
      load_error("edges.csv", "missing src,dst,weight header");
    }
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b, w;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, w)) {
        load_error("edges.csv", "malformed line " + std::to_string(lineno));
      }
      std::size_t src = 0, dst = 0;
      double weight = 0.0;
      try {
        src = std::stoul(a);
        dst = std::stoul(b);
        weight = std::stod(w);
      } catch (const std::exception&) {
        load_error("edges.csv", "bad edge at line " + std::to_string(lineno));
      }
      if (src >= dst) load_error("edges.csv", "src must be < dst at line " + std::to_string(lineno));
      if (dst >= n) load_error("edges.csv", "node id out of range at line " + std::to_string(lineno));
      if (!(weight >= 0.0) || !std::isfinite(weight)) {
        load_error("edges.csv", "negative or non-finite weight at line " + std::to_string(lineno));
      }
      const bool src_in_source = src < ns;
      const bool dst_in_source = dst < ns;
      if (src_in_source != dst_in_source) {
        load_error("edges.csv", "cross-domain edge at line " + std::to_string(lineno));
      }
      if (src_in_source) {
        adj_s(src, dst) = weight;
        adj_s(dst, src) = weight;
      } else {
        adj_t(src - ns, dst - ns) = weight;
        adj_t(dst - ns, src - ns) = weight;
      }
    }
  }

  bundle.source.features = Matrix(ns, m);
  bundle.target.features = Matrix(nt, m);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < m; ++j) bundle.source.features(i, j) = features(i, j);
  }
  for (std::size_t i = 0; i < nt; ++i) {
    for (std::size_t j = 0; j < m; ++j) bundle.target.features(i, j) = features(ns + i, j);
  }
  bundle.source.adjacency = std::move(adj_s);
  bundle.target.adjacency = std::move(adj_t);
  bundle.source.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(ns));
  bundle.target.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(ns), labels.end());
  bundle.source.domains.assign(ns, Domain::Source);
  bundle.target.domains.assign(nt, Domain::Target);
  bundle.source.num_classes = k;
  bundle.target.num_classes = k;

  try {
    bundle.source.validate();
    bundle.target.validate();
  } catch (const std::exception& e) {
    load_error(dir, e.what());
  }
  return bundle;
}

ProbeReport shift_probe(const DatasetBundle& bundle) {
  const Matrix& xs = bundle.source.features;
  const std::size_t ns = xs.rows();

  std::vector<std::size_t> train_idx, hold_idx;
  for (std::size_t i = 0; i < ns; ++i) {
    (i % 5 == 0 ? hold_idx : train_idx).push_back(i);
  }

  Matrix xtrain(train_idx.size(), xs.cols());
  std::vector<double> ytrain(train_idx.size());
  for (std::size_t r = 0; r < train_idx.size(); ++r) {
    for (std::size_t c = 0; c < xs.cols(); ++c) xtrain(r, c) = xs(train_idx[r], c);
    ytrain[r] = bundle.source.labels[train_idx[r]] == 1 ? 1.0 : -1.0;
  }
  const std::vector<double> w = least_squares_fit(xtrain, ytrain);

  Matrix xhold(hold_idx.size(), xs.cols());
  std::vector<int> yhold(hold_idx.size());
  for (std::size_t r = 0; r < hold_idx.size(); ++r) {
    for (std::size_t c = 0; c < xs.cols(); ++c) xhold(r, c) = xs(hold_idx[r], c);
    yhold[r] = bundle.source.labels[hold_idx[r]];
  }

  ProbeReport rep;
  rep.source_holdout_macro_f1 = evaluate(probe_predict(xhold, w), yhold).macro_f1;
  rep.target_macro_f1 =
      evaluate(probe_predict(bundle.target.features, w), bundle.target.labels).macro_f1;
  return rep;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("save_checkpoint: cannot open " + path);
  }
  os.write(kCheckpointHeader, static_cast<std::streamsize>(std::strlen(kCheckpointHeader)));
  const auto entries = params.entries();
  write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, mat] : entries) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, mat->rows());
    write_u64(os, mat->cols());
    for (std::size_t i = 0; i < mat->size(); ++i) write_f64(os, mat->data()[i]);
  }
  if (!os) {
    throw std::runtime_error("save_checkpoint: write failed for " + path);
  }
}

ModelParams load_checkpoint(const std::string& path, int expected_feature_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("load_checkpoint: cannot open " + path);
  }
  std::string header(std::strlen(kCheckpointHeader), '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header.size())) ||
      header != kCheckpointHeader) {
    throw std::runtime_error("load_checkpoint: " + path + " is not an OTGCN-CKPT v1 file");
  }
  const std::uint32_t count = read_u32(is, path);
  std::vector<std::pair<std::string, Matrix>> mats;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, path);
    if (name_len > 256) throw std::runtime_error("load_checkpoint: corrupt name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) load_error(path, "truncated");
    const std::uint64_t rows = read_u64(is, path);
    const std::uint64_t cols = read_u64(is, path);
    if (rows > (1u << 24) || cols > (1u << 24)) {
      throw std::runtime_error("load_checkpoint: implausible matrix shape");
    }
    Matrix m(rows, cols);
    for (std::size_t j = 0; j < m.size(); ++j) m.data()[j] = read_f64(is, path);
    mats.emplace_back(std::move(name), std::move(m));
  }

  auto find = [&](const std::string& name) -> Matrix* {
    for (auto& [n, m] : mats) {
      if (n == name) return &m;
    }
    return nullptr;
  };

  ModelParams p;
  Matrix* gcn_w1 = find("gcn_w1");
  Matrix* gcn_w2 = find("gcn_w2");
  Matrix* head_w = find("head_w");
  Matrix* head_b = find("head_b");
  if (!gcn_w1 || !gcn_w2 || !head_w || !head_b) {
    throw std::runtime_error("load_checkpoint: missing required weight matrices");
  }
  p.variant = find("nft_w1") ? ModelVariant::Full : ModelVariant::PlainGcn;
  p.gcn_w1 = *gcn_w1;
  p.gcn_w2 = *gcn_w2;
  p.head_w = *head_w;
  p.head_b = *head_b;
  if (p.variant == ModelVariant::Full) {
    Matrix* nft_w1 = find("nft_w1");
    Matrix* nft_b1 = find("nft_b1");
    Matrix* nft_w2 = find("nft_w2");
    Matrix* nft_b2 = find("nft_b2");
    if (!nft_b1 || !nft_w2 || !nft_b2) {
      throw std::runtime_error("load_checkpoint: incomplete NFT weights");
    }
    p.nft_w1 = *nft_w1;
    p.nft_b1 = *nft_b1;
    p.nft_w2 = *nft_w2;
    p.nft_b2 = *nft_b2;
  }

  p.feature_dim = static_cast<int>(p.gcn_w1.rows());
  p.hidden1 = static_cast<int>(p.gcn_w1.cols());
  p.hidden2 = static_cast<int>(p.gcn_w2.cols());
  p.num_classes = static_cast<int>(p.head_w.cols());

  if (p.gcn_w2.rows() != p.gcn_w1.cols() ||
      p.head_w.rows() != p.embed_width() ||
      p.head_b.cols() != p.head_w.cols() || p.head_b.rows() != 1) {
    throw std::runtime_error("load_checkpoint: inconsistent matrix shapes");
  }
  if (p.variant == ModelVariant::Full &&
      (p.nft_w1.rows() != p.gcn_w1.rows() || p.nft_w1.cols() != p.gcn_w1.cols() ||
       p.nft_w2.rows() != p.gcn_w2.rows() || p.nft_w2.cols() != p.gcn_w2.cols() ||
       p.nft_b1.cols() != p.nft_w1.cols() || p.nft_b2.cols() != p.nft_w2.cols())) {
    throw std::runtime_error("load_checkpoint: inconsistent NFT shapes");
  }
  if (expected_feature_dim >= 0 && p.feature_dim != expected_feature_dim) {
    throw std::runtime_error("load_checkpoint: feature_dim mismatch (expected " +
                             std::to_string(expected_feature_dim) + ", found " +
                             std::to_string(p.feature_dim) + ")");
  }
  p.require_finite_all();
  return p;
}

}  // namespace otgcn
