#pragma once

#include "nninfo/core.hpp"
#include "nninfo/model.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace nninfo {

// ---------------------------------------------------------------------------
// Two moons
// ---------------------------------------------------------------------------

inline constexpr double kMoonsNoise = 0.1;

/// Two interleaved half-circles in 2D, labels balanced to within one sample.
inline LabeledDataset make_dataset_2d_binary(std::size_t n, Seed seed) {
  if (n < 2) throw ArgumentError("two-moons dataset needs n >= 2");
  Rng rng = make_rng(seed);
  Normal normal;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  shuffle(labels, rng);
  LabeledDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), 2);
  d.labels = labels;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = uniform(rng, 0.0, std::numbers::pi);
    double x, y;
    if (labels[i] == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    const auto r = static_cast<Eigen::Index>(i);
    d.inputs(r, 0) = x + kMoonsNoise * normal(rng);
    d.inputs(r, 1) = y + kMoonsNoise * normal(rng);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Gaussian blobs
// ---------------------------------------------------------------------------

inline constexpr double kBlobStd = 0.5;
inline constexpr double kBlobScale = 2.5;

/// Class centers: the scaled simplex {s e_j} rotated by a seed-drawn
/// orthogonal matrix. Center j depends only on (seed, d, j).
inline RowMatrix blob_centers(std::size_t k, std::size_t d, Seed seed) {
  if (k < 2) throw ArgumentError("need at least two classes");
  if (d < 2) throw ArgumentError("need at least two dimensions");
  if (k > d) throw ArgumentError("simplex centers need k <= d (got k = " + std::to_string(k) +
                                 ", d = " + std::to_string(d) + ")");
  Rng rng = make_rng(derive(seed, 0xb10b));
  Normal normal;
  Matrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  RowMatrix centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < centers.rows(); ++j) centers.row(j) = kBlobScale * q.col(j).transpose();
  return centers;
}

/// k Gaussian blobs in d dimensions. Rows are ordered round-robin over
/// classes and each class draws from its own stream, so the rows with label
/// < k' are exactly the dataset generated with k' classes and the same
/// per-class counts.
inline LabeledDataset make_dataset_kclass(std::size_t n, std::size_t k, std::size_t d, Seed seed) {
  const RowMatrix centers = blob_centers(k, d, seed);
  if (n < k) throw ArgumentError("need at least one sample per class");
  std::vector<std::size_t> count(k, n / k);
  for (std::size_t j = 0; j < n % k; ++j) ++count[j];
  std::vector<Rng> streams;
  for (std::size_t j = 0; j < k; ++j) streams.push_back(make_rng(derive(seed, 1000 + j)));
  std::vector<Normal> normals(k);
  LabeledDataset out;
  out.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t round = 0; row < n; ++round) {
    for (std::size_t j = 0; j < k; ++j) {
      if (round >= count[j]) continue;
      for (std::size_t c = 0; c < d; ++c)
        out.inputs(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) =
            centers(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) +
            kBlobStd * normals[j](streams[j]);
      out.labels.push_back(static_cast<int>(j));
      ++row;
    }
  }
  return out;
}

/// Each label replaced by 1 - label with probability p, from one stream.
inline LabeledDataset flip_labels(const LabeledDataset& d, double p, Seed seed) {
  require(d.is_classification(), "label flipping needs a labeled dataset");
  require(p >= 0.0 && p <= 1.0, "flip probability must lie in [0, 1]");
  LabeledDataset out = d;
  Rng rng = make_rng(seed);
  for (auto& y : out.labels) {
    if (y != 0 && y != 1) throw ArgumentError("label flipping needs binary labels");
    if (Normal::uniform01(rng) < p) y = 1 - y;
  }
  return out;
}

/// Rows whose label is below `k`, in their original order.
inline LabeledDataset restrict_classes(const LabeledDataset& d, std::size_t k) {
  require(d.is_classification(), "class restriction needs a labeled dataset");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (static_cast<std::size_t>(d.labels[i]) < k) rows.push_back(i);
  if (rows.empty()) throw ArgumentError("no samples below the requested class count");
  return d.subset(rows);
}

// ---------------------------------------------------------------------------
// Scalar mean-regression toy model
// ---------------------------------------------------------------------------

struct ToyModelConfig {
  std::size_t n = 100;
  double mu_lo = -1.0;
  double mu_hi = 1.0;
  double noise_sd = 1.0;
  double c = 6.0;  // frequency of phi

  void validate() const {
    if (n < 1) throw ArgumentError("toy model needs N >= 1");
    if (!(c > 0.0)) throw ArgumentError("phi frequency c must be positive");
    if (!(mu_hi > mu_lo)) throw ArgumentError("empty mean range");
    if (!(noise_sd > 0.0)) throw ArgumentError("noise standard deviation must be positive");
  }
};

/// Observations are stored both as the single input column and as targets.
struct ToySample {
  double mu = 0.0;
  LabeledDataset data;
};

inline ToySample make_toy_dataset(const ToyModelConfig& cfg, Seed seed) {
  cfg.validate();
  Rng rng = make_rng(seed);
  Normal normal;
  ToySample s;
  s.mu = uniform(rng, cfg.mu_lo, cfg.mu_hi);
  s.data.inputs.resize(static_cast<Eigen::Index>(cfg.n), 1);
  s.data.targets.resize(static_cast<Eigen::Index>(cfg.n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(cfg.n); ++i) {
    const double x = s.mu + cfg.noise_sd * normal(rng);
    s.data.inputs(i, 0) = x;
    s.data.targets[i] = x;
  }
  return s;
}

/// Toy dataset built from fixed unit-noise draws: x_i = mu + noise_i.
inline LabeledDataset toy_dataset_from(double mu, const Vector& noise) {
  LabeledDataset d;
  d.targets = noise.array() + mu;
  d.inputs = d.targets;
  return d;
}

struct PhiValue {
  double value;
  double derivative;
};

/// phi(theta) = sin(c asinh theta): odd, bounded by 1, with slope envelope
/// c / sqrt(1 + theta^2) so minima get flatter away from the origin.
inline PhiValue toy_phi(double theta, double c) {
  const double a = c * std::asinh(theta);
  return {std::sin(a), c * std::cos(a) / std::sqrt(1.0 + theta * theta)};
}

inline double toy_phi_second(double theta, double c) {
  const double s = std::sqrt(1.0 + theta * theta);
  const double a = c * std::asinh(theta);
  return -c * c * std::sin(a) / (s * s) - c * std::cos(a) * theta / (s * s * s);
}

inline double toy_loss(double theta, const LabeledDataset& data, double c) {
  require(data.targets.size() > 0, "toy loss needs scalar observations");
  const double phi = toy_phi(theta, c).value;
  return (data.targets.array() - phi).square().mean();
}

inline double toy_loss_grad(double theta, const LabeledDataset& data, double c) {
  const auto p = toy_phi(theta, c);
  return -2.0 * p.derivative * (data.targets.mean() - p.value);
}

/// Fisher of the dataset loss read as the negative log-likelihood of
/// N(phi(theta), 1/2) for each of the N observations: 2 N phi'(theta)^2.
inline double toy_fisher(double theta, std::size_t n, double c) {
  const double d = toy_phi(theta, c).derivative;
  return 2.0 * static_cast<double>(n) * d * d;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header: x0..x{d-1},label. Numbers use the shortest round-trip form.
inline void write_dataset_csv(std::ostream& os, const LabeledDataset& d) {
  for (std::size_t j = 0; j < d.dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < d.dim(); ++j) os << format_double(d.inputs(r, static_cast<Eigen::Index>(j))) << ',';
    if (d.is_classification()) os << d.labels[i];
    else os << format_double(d.targets[r]);
    os << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads the format written by write_dataset_csv. Integer-valued label
/// columns are read as class labels unless `regression` is set.
inline LabeledDataset read_dataset_csv(std::istream& is, bool regression = false) {
  std::string line;
  if (!std::getline(is, line)) throw ArgumentError("empty dataset CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.empty() || header.back() != "label") throw ArgumentError("dataset CSV must end with a 'label' column");
  const std::size_t dim = header.size() - 1;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ShapeError("ragged dataset CSV row");
    std::vector<double> r(dim);
    for (std::size_t j = 0; j < dim; ++j) r[j] = parse_double(cells[j]);
    rows.push_back(std::move(r));
    raw_labels.push_back(cells.back());
  }
  LabeledDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  bool integral = !regression;
  for (const auto& s : raw_labels)
    if (s.find_first_not_of("0123456789") != std::string::npos) integral = false;
  if (integral) {
    for (const auto& s : raw_labels) d.labels.push_back(std::stoi(s));
  } else {
    d.targets.resize(static_cast<Eigen::Index>(raw_labels.size()));
    for (std::size_t i = 0; i < raw_labels.size(); ++i) d.targets[static_cast<Eigen::Index>(i)] = parse_double(raw_labels[i]);
  }
  return d;
}

}  // namespace nninfo
