#pragma once

// SGD / Langevin training, free energy, stability Jacobians and the plane
// projection of training paths.

#include "nninfo/core.hpp"
#include "nninfo/fisher.hpp"
#include "nninfo/model.hpp"
#include "nninfo/ndcore.hpp"

#include <optional>

namespace nninfo {

enum class NoiseMode { MinibatchOnly, ExplicitIsotropic };

inline const char* to_string(NoiseMode n) {
  return n == NoiseMode::MinibatchOnly ? "minibatch-only" : "explicit-isotropic";
}

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "minibatch-only") return NoiseMode::MinibatchOnly;
  if (s == "explicit-isotropic") return NoiseMode::ExplicitIsotropic;
  throw ArgumentError("unknown noise mode '" + s + "'");
}

struct TrainConfig {
  double eta = 0.1;
  std::size_t batch = 32;
  long steps = 1000;
  double momentum = 0.0;
  double weight_decay = 0.0;
  NoiseMode noise = NoiseMode::MinibatchOnly;
  double temperature = 0.0;  // explicit-isotropic only
  long snapshot_stride = 100;
  Seed seed{0};

  void validate(std::size_t n) const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ArgumentError("step size must be non-negative");
    if (batch < 1 || batch > n)
      throw ArgumentError("batch size must lie in [1, N] (got B = " + std::to_string(batch) +
                          ", N = " + std::to_string(n) + ")");
    if (steps < 1) throw ArgumentError("need at least one step");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ArgumentError("weight decay must be non-negative");
    if (noise == NoiseMode::ExplicitIsotropic && !(temperature >= 0.0))
      throw ArgumentError("temperature must be non-negative");
    if (snapshot_stride < 1) throw ArgumentError("snapshot stride must be positive");
  }
};

struct Snapshot {
  long step = 0;
  WeightVector weights;
};

/// snapshots are ordered by step and end with the final weights; losses[s]
/// is L_D after s updates.
struct TrainTrace {
  std::vector<Snapshot> snapshots;
  std::vector<double> losses;
  WeightVector final;
  TrainConfig config;
};

inline constexpr double kDivergenceLoss = 1e6;

/// Shuffled without-replacement minibatch indices, one epoch at a time.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch, Seed seed) : perm_(n), batch_(batch), rng_(make_rng(seed)) {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    pos_ = n;  // forces a shuffle on first use
  }

  /// Next batch; a batch never spans two epochs.
  const std::vector<std::size_t>& next() {
    if (batch_ == perm_.size()) {
      if (current_.empty()) current_ = perm_;
      return current_;
    }
    if (pos_ + batch_ > perm_.size()) {
      shuffle(perm_, rng_);
      pos_ = 0;
    }
    current_.assign(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                    perm_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return current_;
  }

  Rng& rng() { return rng_; }

 private:
  std::vector<std::size_t> perm_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::vector<std::size_t> current_;
  Rng rng_;
};

/// w_{k+1} = w_k - eta (momentum buffer of minibatch gradients), plus
/// sqrt(2 eta T) standard-normal noise in explicit-isotropic mode.
inline TrainTrace sgd_train(const ModelSpec& m, const LabeledDataset& data, const TrainConfig& cfg,
                            const WeightVector& w0) {
  check_dataset(m, data);
  cfg.validate(data.size());
  if (w0.k() != m.num_params()) throw ShapeError("initial weights do not match the model");
  TrainTrace tr;
  tr.config = cfg;
  Vector w = w0.values();
  Vector vel = Vector::Zero(w.size());
  EpochSampler sampler(data.size(), cfg.batch, cfg.seed);
  Rng noise_rng = make_rng(derive(cfg.seed, 0x6e6f697365));
  Normal normal;
  const bool full = cfg.batch == data.size();
  const double noise_scale =
      cfg.noise == NoiseMode::ExplicitIsotropic ? std::sqrt(2.0 * cfg.eta * cfg.temperature) : 0.0;
  tr.losses.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  tr.snapshots.push_back({0, w0});

  auto check = [&](double l, long step) {
    if (!std::isfinite(l) || l > kDivergenceLoss)
      throw DivergenceError("training diverged at step " + std::to_string(step), step);
  };

  for (long step = 0; step < cfg.steps; ++step) {
    const WeightVector cur = w0.with_values(w);
    const auto& rows = sampler.next();
    std::pair<double, Vector> lg;
    if (full) {
      lg = loss_and_grad(m, cur, data);
      tr.losses.push_back(lg.first);
    } else {
      lg = loss_and_grad(m, cur, data.subset(rows));
      tr.losses.push_back(loss(m, cur, data));
    }
    check(tr.losses.back(), step);
    Vector g = lg.second;
    if (cfg.weight_decay > 0.0) g += cfg.weight_decay * w;
    vel = cfg.momentum * vel + g;
    w -= cfg.eta * vel;
    if (noise_scale > 0.0)
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] += noise_scale * normal(noise_rng);
    if (!w.allFinite()) throw DivergenceError("non-finite weights at step " + std::to_string(step + 1), step + 1);
    if ((step + 1) % cfg.snapshot_stride == 0 || step + 1 == cfg.steps) tr.snapshots.push_back({step + 1, w0.with_values(w)});
  }
  tr.losses.push_back(loss(m, w0.with_values(w), data));
  check(tr.losses.back(), cfg.steps);
  tr.final = tr.snapshots.back().weights;
  return tr;
}

// ---------------------------------------------------------------------------
// Free energy
// ---------------------------------------------------------------------------

/// L_D(w) + (T/2) log|F(w) + eps I| with the default relative damping.
inline double free_energy(const ModelSpec& m, const WeightVector& w, const LabeledDataset& data, double t) {
  require(t >= 0.0, "temperature must be non-negative");
  const double l = loss(m, w, data);
  if (t == 0.0) return l;
  const FisherEstimate f = m.is_classifier() ? fisher_exact(m, w, data.inputs) : fisher_gaussian(m, w, data.inputs);
  return l + 0.5 * t * logdet_damped(f).value;
}

// ---------------------------------------------------------------------------
// Stability Jacobian
// ---------------------------------------------------------------------------

enum class PerturbationKind { SampleSwap, InputShift };

/// SampleSwap: column j is w*(D with sample indices[j] replaced by
/// replacements row j) - w*(D). InputShift: column j is the central
/// difference of w* in input coordinate coords[j] of sample indices[j].
struct PerturbationScheme {
  PerturbationKind kind = PerturbationKind::InputShift;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> coords;  // InputShift only; defaults to 0
  LabeledDataset replacements;      // SampleSwap only
  double delta = 1e-5;
  double grad_tol = 1e-6;  // convergence threshold on |grad L_D(w*)|
};

namespace detail {

inline void check_scheme(const PerturbationScheme& s, std::size_t n, std::size_t dim) {
  require(!s.indices.empty(), "perturbation scheme needs at least one sample index");
  for (auto i : s.indices) require(i < n, "perturbed sample index out of range");
  if (s.kind == PerturbationKind::SampleSwap) {
    require(s.replacements.size() == s.indices.size(), "one replacement sample per swapped index");
    require(s.replacements.dim() == dim, "replacement dimension does not match the dataset");
  } else {
    require(s.delta > 0.0, "perturbation size must be positive");
    require(s.coords.empty() || s.coords.size() == s.indices.size(), "one input coordinate per perturbed sample");
    for (auto c : s.coords) require(c < dim, "perturbed coordinate out of range");
  }
}

inline LabeledDataset replace_row(const LabeledDataset& d, std::size_t i, const LabeledDataset& src, std::size_t j) {
  LabeledDataset out = d;
  out.inputs.row(static_cast<Eigen::Index>(i)) = src.inputs.row(static_cast<Eigen::Index>(j));
  if (out.is_classification()) out.labels[i] = src.labels[j];
  else out.targets[static_cast<Eigen::Index>(i)] = src.targets[static_cast<Eigen::Index>(j)];
  return out;
}

inline LabeledDataset shift_input(const LabeledDataset& d, std::size_t i, std::size_t c, double by) {
  LabeledDataset out = d;
  out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) += by;
  return out;
}

/// Assembles the Jacobian from an end-point solver `solve(dataset) -> Vector`.
template <class Solve>
Matrix dataset_jacobian_with(const LabeledDataset& data, const PerturbationScheme& s, Solve&& solve) {
  check_scheme(s, data.size(), data.dim());
  const std::size_t p = s.indices.size();
  if (s.kind == PerturbationKind::SampleSwap) {
    const Vector base = solve(data);
    Matrix j(base.size(), static_cast<Eigen::Index>(p));
    for (std::size_t c = 0; c < p; ++c)
      j.col(static_cast<Eigen::Index>(c)) = solve(replace_row(data, s.indices[c], s.replacements, c)) - base;
    return j;
  }
  Matrix j;
  for (std::size_t c = 0; c < p; ++c) {
    const std::size_t coord = s.coords.empty() ? 0 : s.coords[c];
    const Vector plus = solve(shift_input(data, s.indices[c], coord, s.delta));
    const Vector minus = solve(shift_input(data, s.indices[c], coord, -s.delta));
    if (j.size() == 0) j.resize(plus.size(), static_cast<Eigen::Index>(p));
    j.col(static_cast<Eigen::Index>(c)) = (plus - minus) / (2.0 * s.delta);
  }
  return j;
}

}  // namespace detail

/// d w* / d D for the network trained by sgd_train with a fixed seed; every
/// perturbed run reuses cfg (and hence its seed) and w0.
inline Matrix dataset_jacobian(const ModelSpec& m, const LabeledDataset& data, const TrainConfig& cfg,
                               const WeightVector& w0, const PerturbationScheme& scheme) {
  return detail::dataset_jacobian_with(data, scheme, [&](const LabeledDataset& d) {
    const auto tr = sgd_train(m, d, cfg, w0);
    const double gn = grad_loss(m, tr.final, d).values().norm();
    if (!(gn < scheme.grad_tol))
      throw StabilityUndefinedError("training did not converge (|grad| = " + format_double(gn) +
                                    " >= " + format_double(scheme.grad_tol) + ")");
    return Vector(tr.final.values());
  });
}

// ---------------------------------------------------------------------------
// Plane projection
// ---------------------------------------------------------------------------

struct PlaneReport {
  Matrix basis;    // k x 2, orthonormal columns
  RowMatrix path_a;  // steps x 2
  RowMatrix path_b;
  std::vector<long> steps_a;
  std::vector<long> steps_b;
  Eigen::Matrix2d projected_fisher;
  Eigen::Vector2d ellipse_axes;     // semi-axes 1/sqrt(eigenvalue) of the projected Fisher
  Eigen::Matrix2d ellipse_directions;
  double endpoint_distance = 0.0;
};

inline constexpr double kMinPlaneAngle = 1e-6;

/// Orthonormal basis of the plane through w0, finalA and finalB; the path
/// points of trace A span the second direction when both endpoints coincide.
inline PlaneReport plane_projection(const WeightVector& w0, const TrainTrace& a, const TrainTrace& b,
                                    const Vector& f_diag) {
  const auto k = static_cast<Eigen::Index>(w0.k());
  for (const auto* t : {&a, &b})
    for (const auto& s : t->snapshots)
      if (static_cast<Eigen::Index>(s.weights.k()) != k) throw ShapeError("trace weights differ in dimension");
  require(a.final.k() == w0.k() && b.final.k() == w0.k(), "final weights differ in dimension");
  require(f_diag.size() == k, "Fisher diagonal does not match the weights");
  const Vector& o = w0.values();
  const Vector u = a.final.values() - o;
  const Vector v = b.final.values() - o;
  PlaneReport r;
  r.endpoint_distance = (a.final.values() - b.final.values()).norm();

  auto orth = [](const Vector& e1, const Vector& x) -> std::optional<Vector> {
    const double nx = x.norm();
    if (nx == 0.0) return std::nullopt;
    const Vector p = x - e1.dot(x) * e1;
    if (p.norm() / nx < std::sin(kMinPlaneAngle)) return std::nullopt;
    return Vector(p / p.norm());
  };

  const Vector& first = u.norm() > 0.0 ? u : v;
  if (first.norm() == 0.0) throw DegeneratePlaneError("both end points coincide with the initial point");
  const Vector e1 = first / first.norm();
  std::optional<Vector> e2 = orth(e1, u.norm() > 0.0 ? v : u);
  if (!e2) {
    if (r.endpoint_distance > 0.0)
      throw DegeneratePlaneError("end points are collinear with the initial point");
    double best = 0.0;
    for (const auto& s : a.snapshots) {
      const Vector x = s.weights.values() - o;
      const double res = (x - e1.dot(x) * e1).norm();
      if (res > best) {
        best = res;
        e2 = orth(e1, x);
      }
    }
    if (!e2) throw DegeneratePlaneError("training paths do not span a plane");
  }
  r.basis.resize(k, 2);
  r.basis.col(0) = e1;
  r.basis.col(1) = *e2;

  auto project = [&](const TrainTrace& t, RowMatrix& path, std::vector<long>& steps) {
    path.resize(static_cast<Eigen::Index>(t.snapshots.size()), 2);
    for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
      path.row(static_cast<Eigen::Index>(i)) = (r.basis.transpose() * (t.snapshots[i].weights.values() - o)).transpose();
      steps.push_back(t.snapshots[i].step);
    }
  };
  project(a, r.path_a, r.steps_a);
  project(b, r.path_b, r.steps_b);

  r.projected_fisher = r.basis.transpose() * f_diag.asDiagonal() * r.basis;
  r.projected_fisher = 0.5 * (r.projected_fisher + r.projected_fisher.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(r.projected_fisher);
  for (int i = 0; i < 2; ++i) {
    const double l = es.eigenvalues()[i];
    r.ellipse_axes[i] = l > 0.0 ? 1.0 / std::sqrt(l) : INFINITY;
  }
  r.ellipse_directions = es.eigenvectors();
  return r;
}

}  // namespace nninfo
