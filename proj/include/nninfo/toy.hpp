#pragma once

// Scalar mean-regression toy: SGD end points over many datasets, their
// Shannon information, the best proper-prior Gaussian information and the
// Fisher-based approximation.

#include "nninfo/datasets.hpp"
#include "nninfo/dynamics.hpp"
#include "nninfo/infoweights.hpp"

namespace nninfo {

/// Fisher floor relative to the sharpest possible value 2 N c^2, used where
/// the end point sits on a peak of phi (phi' = 0).
inline constexpr double kToyFisherFloor = 1e-8;

inline double toy_fisher_floored(double theta, std::size_t n, double c) {
  return std::max(toy_fisher(theta, n, c), kToyFisherFloor * 2.0 * static_cast<double>(n) * c * c);
}

/// SGD on L_D(theta) = mean (x_i - phi(theta))^2 with without-replacement
/// minibatches; returns the last iterate.
inline double toy_sgd(const Vector& x, const TrainConfig& cfg, double theta0, double c) {
  const auto n = static_cast<std::size_t>(x.size());
  cfg.validate(n);
  EpochSampler sampler(n, cfg.batch, cfg.seed);
  Rng noise_rng = make_rng(derive(cfg.seed, 0x6e6f697365));
  Normal normal;
  const double noise_scale =
      cfg.noise == NoiseMode::ExplicitIsotropic ? std::sqrt(2.0 * cfg.eta * cfg.temperature) : 0.0;
  const double full_mean = x.mean();
  const bool full = cfg.batch == n;
  double theta = theta0, vel = 0.0;
  for (long step = 0; step < cfg.steps; ++step) {
    double mean;
    if (full) {
      mean = full_mean;
    } else {
      const auto& rows = sampler.next();
      double s = 0.0;
      for (auto i : rows) s += x[static_cast<Eigen::Index>(i)];
      mean = s / static_cast<double>(rows.size());
    }
    const auto p = toy_phi(theta, c);
    double g = -2.0 * p.derivative * (mean - p.value) + cfg.weight_decay * theta;
    vel = cfg.momentum * vel + g;
    theta -= cfg.eta * vel;
    if (noise_scale > 0.0) theta += noise_scale * normal(noise_rng);
    if (!std::isfinite(theta)) throw DivergenceError("toy training diverged at step " + std::to_string(step + 1), step + 1);
  }
  return theta;
}

struct ToyMinimum {
  double theta = 0.0;
  bool on_peak = false;  // |mean| >= 1: the minimizer sits where phi' = 0
};

/// Exact minimizer of L_D in the basin containing theta. With a = c asinh(theta),
/// basins are the monotone segments |a - j pi| <= pi/2 when |mean| < 1, and
/// the segments around the matching peaks otherwise.
inline ToyMinimum toy_basin_minimum(double theta, double mean, double c) {
  const double a = c * std::asinh(theta);
  const double pi = std::numbers::pi;
  ToyMinimum out;
  double a_star;
  if (std::abs(mean) < 1.0) {
    const double j = std::round(a / pi);
    const double sign = std::fmod(std::abs(j), 2.0) == 0.0 ? 1.0 : -1.0;
    a_star = j * pi + sign * std::asin(mean);
  } else {
    const double peak = mean > 0.0 ? pi / 2.0 : -pi / 2.0;
    a_star = peak + 2.0 * pi * std::round((a - peak) / (2.0 * pi));
    out.on_peak = true;
  }
  out.theta = std::sinh(a_star / c);
  return out;
}

struct ToyRun {
  double theta0 = 0.0;
  double theta_sgd = 0.0;
  double theta = 0.0;  // converged end point
  double fisher = 0.0;
  double grad = 0.0;   // |dL_D/dtheta| at theta
  bool converged = false;
  bool on_peak = false;
};

inline constexpr double kToyGradTol = 1e-6;

/// SGD followed by the exact basin minimizer, so the end point satisfies the
/// convergence criterion whenever SGD ends inside a basin.
inline ToyRun toy_train(const Vector& x, const TrainConfig& cfg, double theta0, double c) {
  ToyRun r;
  r.theta0 = theta0;
  r.theta_sgd = toy_sgd(x, cfg, theta0, c);
  const double mean = x.mean();
  const auto m = toy_basin_minimum(r.theta_sgd, mean, c);
  r.theta = m.theta;
  r.on_peak = m.on_peak;
  const auto p = toy_phi(r.theta, c);
  r.grad = std::abs(2.0 * p.derivative * (mean - p.value));
  r.converged = r.grad < kToyGradTol;
  r.fisher = toy_fisher_floored(r.theta, static_cast<std::size_t>(x.size()), c);
  return r;
}

/// Free energy of the toy: L_D(theta) + (T/2) log(2 N phi'(theta)^2).
inline double toy_free_energy(double theta, const LabeledDataset& data, double c, double t) {
  require(t >= 0.0, "temperature must be non-negative");
  const double l = toy_loss(theta, data, c);
  if (t == 0.0) return l;
  return l + 0.5 * t * std::log(toy_fisher(theta, data.size(), c));
}

/// d theta* / d D for the toy under a perturbation scheme applied to the
/// observations (input column); every perturbed run reuses cfg and theta0.
inline Matrix toy_dataset_jacobian(const LabeledDataset& data, const TrainConfig& cfg, double theta0, double c,
                                   const PerturbationScheme& scheme) {
  return detail::dataset_jacobian_with(data, scheme, [&](const LabeledDataset& d) {
    const Vector x = d.inputs.col(0);
    const auto r = toy_train(x, cfg, theta0, c);
    if (!(r.grad < scheme.grad_tol))
      throw StabilityUndefinedError("toy training did not converge (|grad| = " + format_double(r.grad) + ")");
    Vector out(1);
    out[0] = r.theta;
    return out;
  });
}

/// d theta* / d mu with x_i = mu + noise_i: central difference shifting every
/// observation by +-delta.
inline double toy_mean_sensitivity(const Vector& x, const TrainConfig& cfg, double theta0, double c, double delta) {
  const Vector xp = x.array() + delta;
  const Vector xm = x.array() - delta;
  return (toy_train(xp, cfg, theta0, c).theta - toy_train(xm, cfg, theta0, c).theta) / (2.0 * delta);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct ToyPipelineConfig {
  ToyModelConfig model;
  std::vector<std::size_t> batch_sizes{5, 10, 25, 100};
  std::size_t datasets = 200;
  std::size_t runs_per = 1;
  TrainConfig train{1.0, 100, 20000, 0.0, 0.0, NoiseMode::MinibatchOnly, 0.0, 20000, Seed{0}};
  double init_lo = -20.0;
  double init_hi = 20.0;
  std::size_t mi_samples = 10000;
  double iw_beta = 2.0;  // Sigma* = F^-1 with H = F
  double lambda2_min = 1e-2;
  double lambda2_max = 1e6;
  std::size_t lambda2_points = 161;
  double stability_delta = 1e-6;
  bool stability = true;
  double hist_range = 60.0;
  std::size_t hist_bins = 120;
  Seed seed{0};
  unsigned jobs = 1;

  /// |theta| beyond which every minimum has |phi'| < 1 (slope envelope c / sqrt(1 + theta^2)).
  double flat_threshold() const { return std::sqrt(std::max(model.c * model.c - 1.0, 0.0)); }

  void validate() const {
    model.validate();
    require(!batch_sizes.empty(), "need at least one batch size");
    for (auto b : batch_sizes) require(b >= 1 && b <= model.n, "batch sizes must lie in [1, N]");
    require(datasets >= 2, "need at least two datasets");
    require(runs_per >= 1, "need at least one run per dataset");
    require(init_hi > init_lo, "empty initialization range");
    require(mi_samples >= 1, "need at least one Monte-Carlo sample");
    require(lambda2_min > 0.0 && lambda2_max >= lambda2_min && lambda2_points >= 1, "invalid lambda^2 grid");
    require(hist_range > 0.0 && hist_bins >= 1, "invalid histogram");
    require(stability_delta > 0.0, "stability perturbation must be positive");
  }
};

struct ToyBatchResult {
  std::size_t batch = 0;
  double shannon_mi = 0.0;
  double gaussian_iw = 0.0;
  double best_lambda2 = 0.0;
  double mean_abs_theta = 0.0;
  double flat_fraction = 0.0;
  double mean_fisher = 0.0;
  double mean_log_fisher = 0.0;
  double log_fisher_se = 0.0;  // standard error of mean_log_fisher
  ApproxMi fisher_approx;      // Brunel-Nadal from the stability Jacobian
  std::size_t unconverged = 0;
  std::size_t on_peak = 0;
  std::vector<ToyRun> runs;           // dataset-major, runs_per per dataset
  std::vector<double> mean_jacobian;  // d theta*/d mu per dataset (first run)
  std::vector<std::size_t> histogram;
};

struct ToyReport {
  ToyPipelineConfig config;
  std::vector<double> mus;
  std::vector<ToyBatchResult> batches;
};

/// I(theta; D) for a 1D family where Q(theta | D) is an equal-weight mixture
/// of Gaussians (one per run) and datasets are equally likely.
inline double toy_mixture_mi(const std::vector<std::vector<double>>& means, const std::vector<std::vector<double>>& vars,
                             std::size_t samples, Seed seed, unsigned jobs) {
  const std::size_t nd = means.size();
  std::size_t total_components = 0;
  for (const auto& m : means) total_components += m.size();
  if (nd < 2) return 0.0;
  if (total_components == nd) {
    std::vector<GaussianSpec> posts;
    for (std::size_t i = 0; i < nd; ++i) posts.push_back(GaussianSpec::isotropic(Vector::Constant(1, means[i][0]), vars[i][0]));
    return adapted_prior_mi(posts, std::vector<double>(nd, 1.0 / static_cast<double>(nd)), samples, seed, jobs).mi_nats;
  }
  // Flattened components with log weights for the marginal.
  std::vector<double> mu, iv, lnorm;
  for (std::size_t i = 0; i < nd; ++i)
    for (std::size_t r = 0; r < means[i].size(); ++r) {
      mu.push_back(means[i][r]);
      iv.push_back(1.0 / vars[i][r]);
      lnorm.push_back(-std::log(static_cast<double>(nd * means[i].size())) - 0.5 * (std::log(vars[i][r]) + kLog2Pi));
    }
  std::vector<double> per(nd, 0.0);
  parallel_for(nd, jobs, [&](std::size_t i) {
    Rng rng = make_rng(derive(seed, i));
    Normal normal;
    const std::size_t runs = means[i].size();
    Vector own(static_cast<Eigen::Index>(runs)), all(static_cast<Eigen::Index>(mu.size()));
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t r = s % runs;
      const double w = means[i][r] + std::sqrt(vars[i][r]) * normal(rng);
      for (std::size_t q = 0; q < runs; ++q) {
        const double d = w - means[i][q];
        own[static_cast<Eigen::Index>(q)] = -std::log(static_cast<double>(runs)) - 0.5 * (std::log(vars[i][q]) + kLog2Pi) -
                                            0.5 * d * d / vars[i][q];
      }
      for (std::size_t j = 0; j < mu.size(); ++j) {
        const double d = w - mu[j];
        all[static_cast<Eigen::Index>(j)] = lnorm[j] - 0.5 * d * d * iv[j];
      }
      acc += log_sum_exp(own) - log_sum_exp(all);
    }
    per[i] = acc / static_cast<double>(samples);
  });
  double mi = 0.0;
  for (double p : per) mi += p / static_cast<double>(nd);
  return mi;
}

inline std::vector<double> lambda2_grid(const ToyPipelineConfig& cfg) {
  std::vector<double> g;
  if (cfg.lambda2_points == 1) return {cfg.lambda2_min};
  const double a = std::log(cfg.lambda2_min), b = std::log(cfg.lambda2_max);
  for (std::size_t i = 0; i < cfg.lambda2_points; ++i)
    g.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(cfg.lambda2_points - 1)));
  return g;
}

/// Datasets and initializations are shared across batch sizes; every trial
/// draws from its own stream derived from the master seed.
inline ToyReport toy_pipeline(const ToyPipelineConfig& cfg) {
  cfg.validate();
  ToyReport rep;
  rep.config = cfg;
  const std::size_t nd = cfg.datasets, nr = cfg.runs_per;
  std::vector<Vector> xs(nd);
  rep.mus.resize(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    const auto s = make_toy_dataset(cfg.model, derive(cfg.seed, d));
    rep.mus[d] = s.mu;
    xs[d] = s.data.targets;
  }
  std::vector<double> theta0(nd * nr);
  for (std::size_t t = 0; t < nd * nr; ++t) {
    Rng rng = make_rng(derive(cfg.seed, 1'000'000 + t));
    theta0[t] = uniform(rng, cfg.init_lo, cfg.init_hi);
  }
  const double c = cfg.model.c;
  const double flat = cfg.flat_threshold();
  const auto grid = lambda2_grid(cfg);

  for (std::size_t bi = 0; bi < cfg.batch_sizes.size(); ++bi) {
    ToyBatchResult br;
    br.batch = cfg.batch_sizes[bi];
    br.runs.resize(nd * nr);
    br.mean_jacobian.assign(nd, 0.0);
    parallel_for(nd * nr, cfg.jobs, [&](std::size_t t) {
      TrainConfig tc = cfg.train;
      tc.batch = br.batch;
      tc.seed = derive(cfg.seed, 2'000'000 + t);
      const std::size_t d = t / nr;
      br.runs[t] = toy_train(xs[d], tc, theta0[t], c);
      if (cfg.stability && t % nr == 0)
        br.mean_jacobian[d] = toy_mean_sensitivity(xs[d], tc, theta0[t], c, cfg.stability_delta);
    });

    std::vector<std::vector<double>> means(nd), vars(nd);
    std::vector<double> logs;
    double abs_sum = 0.0, fisher_sum = 0.0;
    std::size_t flat_count = 0;
    br.histogram.assign(cfg.hist_bins, 0);
    for (std::size_t t = 0; t < nd * nr; ++t) {
      const auto& r = br.runs[t];
      means[t / nr].push_back(r.theta);
      vars[t / nr].push_back(1.0 / r.fisher);
      abs_sum += std::abs(r.theta);
      fisher_sum += r.fisher;
      logs.push_back(std::log(r.fisher));
      if (std::abs(r.theta) > flat) ++flat_count;
      if (!r.converged) ++br.unconverged;
      if (r.on_peak) ++br.on_peak;
      const double u = (r.theta + cfg.hist_range) / (2.0 * cfg.hist_range);
      const auto bin = static_cast<std::ptrdiff_t>(std::floor(u * static_cast<double>(cfg.hist_bins)));
      ++br.histogram[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(cfg.hist_bins) - 1))];
    }
    const double total = static_cast<double>(nd * nr);
    br.mean_abs_theta = abs_sum / total;
    br.flat_fraction = static_cast<double>(flat_count) / total;
    br.mean_fisher = fisher_sum / total;
    br.mean_log_fisher = std::accumulate(logs.begin(), logs.end(), 0.0) / total;
    double ss = 0.0;
    for (double l : logs) ss += (l - br.mean_log_fisher) * (l - br.mean_log_fisher);
    br.log_fisher_se = logs.size() > 1 ? std::sqrt(ss / (total - 1.0) / total) : 0.0;

    br.shannon_mi = toy_mixture_mi(means, vars, cfg.mi_samples, derive(cfg.seed, 3'000'000 + bi), cfg.jobs);

    br.gaussian_iw = INFINITY;
    for (double l2 : grid) {
      double acc = 0.0;
      for (const auto& r : br.runs) {
        const Matrix h = Matrix::Constant(1, 1, r.fisher);
        acc += fisher_iw(h, Vector::Constant(1, r.theta), cfg.iw_beta, l2);
      }
      acc /= total;
      if (acc < br.gaussian_iw) {
        br.gaussian_iw = acc;
        br.best_lambda2 = l2;
      }
    }

    if (cfg.stability) {
      std::vector<StabilitySample> samples;
      for (std::size_t d = 0; d < nd; ++d)
        samples.push_back({Matrix::Constant(1, 1, br.mean_jacobian[d]), Matrix::Constant(1, 1, br.runs[d * nr].fisher)});
      br.fisher_approx = shannon_fisher_approx(std::log(cfg.model.mu_hi - cfg.model.mu_lo), samples, cfg.iw_beta / 2.0);
    }
    rep.batches.push_back(std::move(br));
  }
  return rep;
}

}  // namespace nninfo
