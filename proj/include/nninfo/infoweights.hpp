#pragma once

// Information in the weights: Gaussian pre/post distributions, complexity,
// PAC-Bayes bounds and mutual-information estimators. All values in nats.

#include "nninfo/core.hpp"
#include "nninfo/model.hpp"
#include "nninfo/ndcore.hpp"

#include <optional>

namespace nninfo {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

// ---------------------------------------------------------------------------
// GaussianSpec
// ---------------------------------------------------------------------------

enum class CovarianceKind { Isotropic, Diagonal, Full };

inline const char* to_string(CovarianceKind c) {
  switch (c) {
    case CovarianceKind::Isotropic: return "isotropic";
    case CovarianceKind::Diagonal: return "diagonal";
    case CovarianceKind::Full: return "full";
  }
  return "?";
}

class GaussianSpec {
 public:
  GaussianSpec() = default;

  static GaussianSpec isotropic(Vector mean, double sigma2) {
    GaussianSpec g(std::move(mean), CovarianceKind::Isotropic);
    g.sigma2_ = sigma2;
    g.validate();
    return g;
  }
  static GaussianSpec diagonal(Vector mean, Vector variances) {
    GaussianSpec g(std::move(mean), CovarianceKind::Diagonal);
    g.diag_ = std::move(variances);
    g.validate();
    return g;
  }
  static GaussianSpec full(Vector mean, Matrix cov) {
    GaussianSpec g(std::move(mean), CovarianceKind::Full);
    g.full_ = std::move(cov);
    g.validate();
    return g;
  }

  std::size_t k() const noexcept { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const noexcept { return mean_; }
  CovarianceKind kind() const noexcept { return kind_; }
  double sigma2() const noexcept { return sigma2_; }
  const Vector& variances() const noexcept { return diag_; }
  const Matrix& full_covariance() const noexcept { return full_; }

  Matrix covariance() const {
    const auto n = mean_.size();
    switch (kind_) {
      case CovarianceKind::Isotropic: return sigma2_ * Matrix::Identity(n, n);
      case CovarianceKind::Diagonal: return diag_.asDiagonal();
      case CovarianceKind::Full: return full_;
    }
    return {};
  }

  double trace() const {
    switch (kind_) {
      case CovarianceKind::Isotropic: return sigma2_ * static_cast<double>(k());
      case CovarianceKind::Diagonal: return diag_.sum();
      case CovarianceKind::Full: return full_.trace();
    }
    return 0.0;
  }

  double logdet() const {
    switch (kind_) {
      case CovarianceKind::Isotropic: return static_cast<double>(k()) * std::log(sigma2_);
      case CovarianceKind::Diagonal: return diag_.array().log().sum();
      case CovarianceKind::Full: {
        const Matrix& l = chol_.matrixL();
        return 2.0 * l.diagonal().array().log().sum();
      }
    }
    return 0.0;
  }

  /// Lower factor L with covariance L L^T.
  Matrix factor() const {
    const auto n = mean_.size();
    switch (kind_) {
      case CovarianceKind::Isotropic: return std::sqrt(sigma2_) * Matrix::Identity(n, n);
      case CovarianceKind::Diagonal: return diag_.array().sqrt().matrix().asDiagonal();
      case CovarianceKind::Full: return chol_.matrixL();
    }
    return {};
  }

  /// Squared Mahalanobis distance (v - mean)^T Sigma^-1 (v - mean).
  double mahalanobis2(const Vector& v) const {
    const Vector d = v - mean_;
    switch (kind_) {
      case CovarianceKind::Isotropic: return d.squaredNorm() / sigma2_;
      case CovarianceKind::Diagonal: return (d.array().square() / diag_.array()).sum();
      case CovarianceKind::Full: return chol_.matrixL().solve(d).squaredNorm();
    }
    return 0.0;
  }

  /// tr(Sigma^-1 A) for symmetric A.
  double trace_inverse_times(const Matrix& a) const {
    switch (kind_) {
      case CovarianceKind::Isotropic: return a.trace() / sigma2_;
      case CovarianceKind::Diagonal: return (a.diagonal().array() / diag_.array()).sum();
      case CovarianceKind::Full: return chol_.solve(a).trace();
    }
    return 0.0;
  }

  double log_density(const Vector& v) const {
    return -0.5 * (mahalanobis2(v) + logdet() + static_cast<double>(k()) * kLog2Pi);
  }

 private:
  GaussianSpec(Vector mean, CovarianceKind kind) : mean_(std::move(mean)), kind_(kind) {}

  void validate() {
    if (mean_.size() == 0) throw ArgumentError("Gaussian needs dimension k > 0");
    if (!mean_.allFinite()) throw ArgumentError("Gaussian mean has non-finite entries");
    switch (kind_) {
      case CovarianceKind::Isotropic:
        if (!(sigma2_ > 0.0) || !std::isfinite(sigma2_)) throw ArgumentError("isotropic variance must be positive");
        break;
      case CovarianceKind::Diagonal:
        if (diag_.size() != mean_.size()) throw ShapeError("diagonal covariance length does not match mean");
        if (!((diag_.array() > 0.0).all()) || !diag_.allFinite())
          throw ArgumentError("diagonal variances must be positive");
        break;
      case CovarianceKind::Full: {
        if (full_.rows() != mean_.size() || full_.cols() != mean_.size())
          throw ShapeError("covariance shape does not match mean");
        if (!full_.allFinite()) throw ArgumentError("covariance has non-finite entries");
        const double asym = (full_ - full_.transpose()).norm();
        if (asym > 1e-10 * std::max(1.0, full_.norm())) throw ArgumentError("covariance is not symmetric");
        full_ = 0.5 * (full_ + full_.transpose());
        chol_.compute(full_);
        if (chol_.info() != Eigen::Success) throw ArgumentError("covariance is not positive definite");
        break;
      }
    }
  }

  Vector mean_;
  CovarianceKind kind_ = CovarianceKind::Isotropic;
  double sigma2_ = 1.0;
  Vector diag_;
  Matrix full_;
  Eigen::LLT<Matrix> chol_;
};

/// KL(q || p) in nats.
inline double kl_gaussians(const GaussianSpec& q, const GaussianSpec& p) {
  if (q.k() != p.k()) throw ShapeError("KL between Gaussians of different dimension");
  const double k = static_cast<double>(q.k());
  const double tr = p.trace_inverse_times(q.covariance());
  const double maha = p.mahalanobis2(q.mean());
  return 0.5 * (tr + maha - k + p.logdet() - q.logdet());
}

// ---------------------------------------------------------------------------
// Complexity C_beta
// ---------------------------------------------------------------------------

struct ComplexityReport {
  double beta = 0.0;
  double expected_loss = 0.0;
  double kl_nats = 0.0;
  double c_beta = 0.0;
  std::size_t mc_samples = 0;
};

namespace detail {

/// m standard-normal draws in k dimensions (columns). With m > k the draws
/// are centered and whitened so their empirical mean is 0 and their
/// empirical covariance (1/m normalization) is exactly I.
inline Matrix standard_draws(std::size_t k, std::size_t m, Seed seed, bool moment_match) {
  Rng rng = make_rng(seed);
  Normal normal;
  Matrix z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
  if (moment_match && m > k) {
    const Vector mean = z.rowwise().mean();
    z.colwise() -= mean;
    const Matrix s = z * z.transpose() / static_cast<double>(m);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success) z = llt.matrixL().solve(z);
  }
  return z;
}

}  // namespace detail

/// C_beta = E_{w~q}[L(w)] + beta KL(q || p) with an m-sample estimate of the
/// expected loss. Moment matching makes the estimate exact for quadratic L.
template <class LossFn>
ComplexityReport complexity(LossFn&& loss_of, const GaussianSpec& q, const GaussianSpec& p, double beta,
                            std::size_t m, Seed seed, bool moment_match = true) {
  require(m >= 1, "complexity needs m >= 1 weight samples");
  require(beta >= 0.0 && std::isfinite(beta), "beta must be non-negative");
  const Matrix z = detail::standard_draws(q.k(), m, seed, moment_match);
  const Matrix l = q.factor();
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const Vector w = q.mean() + l * z.col(j);
    total += loss_of(w);
  }
  ComplexityReport r;
  r.beta = beta;
  r.expected_loss = total / static_cast<double>(m);
  r.kl_nats = kl_gaussians(q, p);
  r.c_beta = r.expected_loss + beta * r.kl_nats;
  r.mc_samples = m;
  return r;
}

inline ComplexityReport complexity(const ModelSpec& model, const LabeledDataset& data, const GaussianSpec& q,
                                   const GaussianSpec& p, double beta, std::size_t m, Seed seed) {
  check_dataset(model, data);
  require(q.k() == model.num_params(), "post-distribution dimension does not match the model");
  const auto layout = model.layout();
  return complexity([&](const Vector& w) { return loss(model, WeightVector(w, layout), data); }, q, p, beta, m,
                    seed);
}

// ---------------------------------------------------------------------------
// Optimal post-distribution and Fisher information in the weights
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::LLT<Matrix> shifted_curvature(const Matrix& h, double beta, double lambda2) {
  require(h.rows() == h.cols() && h.rows() > 0, "curvature must be a non-empty square matrix");
  require(beta > 0.0, "beta must be positive");
  require(lambda2 > 0.0, "prior variance must be positive");
  if ((h - h.transpose()).norm() > 1e-8 * std::max(1.0, h.norm())) throw ArgumentError("curvature is not symmetric");
  Matrix a = 0.5 * (h + h.transpose());
  a.diagonal().array() += beta / (2.0 * lambda2);
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw ArgumentError(
        "H + beta/(2 lambda^2) I is not positive definite; use the Fisher in place of the Hessian "
        "(a positive semi-definite approximation)");
  return llt;
}

}  // namespace detail

/// Sigma* = (beta/2) (H + beta/(2 lambda^2) I)^-1, the minimizer of
/// tr(H Sigma) + (beta/2)[tr(Sigma)/lambda^2 - log|Sigma|].
inline Matrix optimal_sigma(const Matrix& h, double beta, double lambda2) {
  const auto llt = detail::shifted_curvature(h, beta, lambda2);
  const Matrix inv = llt.solve(Matrix::Identity(h.rows(), h.cols()));
  Matrix s = 0.5 * beta * inv;
  return 0.5 * (s + s.transpose());
}

/// Additive constant of the closed form. Consistent makes the value equal
/// KL(N(w*, Sigma*) || N(0, lambda^2 I)) and vanish when H = 0 and w* = 0;
/// AsPrinted subtracts a further k/2.
enum class IwConstant { Consistent, AsPrinted };

inline double fisher_iw(const Matrix& h, const Vector& w_star, double beta, double lambda2,
                        IwConstant constant = IwConstant::Consistent) {
  require(w_star.size() == h.rows(), "w* dimension does not match the curvature");
  const auto llt = detail::shifted_curvature(h, beta, lambda2);
  const double k = static_cast<double>(h.rows());
  const Matrix& l = llt.matrixL();
  const double logdet_a = 2.0 * l.diagonal().array().log().sum();
  const double tr_sigma = 0.5 * beta * llt.solve(Matrix::Identity(h.rows(), h.cols())).trace();
  const double offset = constant == IwConstant::Consistent ? 0.5 * k : k;
  return 0.5 * logdet_a + 0.5 * k * std::log(2.0 * lambda2 / beta) - offset +
         (w_star.squaredNorm() + tr_sigma) / (2.0 * lambda2);
}

inline double fisher_iw(const Matrix& h, const WeightVector& w_star, double beta, double lambda2,
                        IwConstant constant = IwConstant::Consistent) {
  return fisher_iw(h, w_star.values(), beta, lambda2, constant);
}

/// Improper-prior limit: only (1/2) log|F + eps I| survives. Defined up to an
/// additive constant, so it is a reporting quantity and never a KL term.
inline double iw_logdet_only(const Matrix& f, double eps) {
  Matrix a = f;
  a.diagonal().array() += eps;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("damped curvature is not positive definite");
  const Matrix& l = llt.matrixL();
  return l.diagonal().array().log().sum();
}

// ---------------------------------------------------------------------------
// PAC-Bayes
// ---------------------------------------------------------------------------

struct PacBayesReport {
  double train_loss = 0.0;
  double kl_nats = 0.0;
  std::size_t n = 0;
  double beta = 0.0;
  double delta = 1.0;
  double bound = 0.0;
  bool expectation_form = false;
};

/// (1 - 1/(2 beta))^-1 [L + (beta/N)(KL + log(1/delta))]; the expectation
/// form drops log(1/delta). Losses are bounded by 1.
inline PacBayesReport pac_bayes_bound(double train_loss, double kl_nats, std::size_t n, double beta, double delta,
                                      bool expectation_form) {
  if (!(beta > 0.5)) throw ArgumentError("PAC-Bayes bound needs beta > 1/2");
  require(train_loss >= 0.0 && train_loss <= 1.0, "train loss must lie in [0, 1]");
  require(std::isfinite(kl_nats), "KL must be finite");
  require(n >= 1, "sample count must be positive");
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  PacBayesReport r{train_loss, kl_nats, n, beta, delta, 0.0, expectation_form};
  const double conf = expectation_form ? 0.0 : std::log(1.0 / delta);
  const double b = static_cast<double>(n);
  r.bound = (train_loss + beta / b * (kl_nats + conf)) / (1.0 - 1.0 / (2.0 * beta));
  return r;
}

/// Bound-minimizing beta by golden-section search on log(beta - 1/2) over
/// [1/2 + 1e-9, beta_max]. The bound is unimodal in beta for KL > 0.
inline PacBayesReport pac_bayes_optimal(double train_loss, double kl_nats, std::size_t n, double delta,
                                        bool expectation_form, double beta_max = 1e9) {
  auto at = [&](double u) { return pac_bayes_bound(train_loss, kl_nats, n, 0.5 + std::exp(u), delta, expectation_form); };
  double a = std::log(1e-9), b = std::log(beta_max - 0.5);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = at(c).bound, fd = at(d).bound;
  for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = at(c).bound;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = at(d).bound;
    }
  }
  return at(0.5 * (a + b));
}

// ---------------------------------------------------------------------------
// Adapted prior: Shannon information of a Gaussian mixture
// ---------------------------------------------------------------------------

struct MixtureMi {
  double mi_nats = 0.0;
  std::size_t samples_per_component = 0;
  Vector per_component;  // KL(Q_i || mixture) estimates
};

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// I(w; D) = sum_i pi_i KL(Q_i || sum_j pi_j Q_j), each KL estimated from
/// `samples` draws of Q_i.
inline MixtureMi adapted_prior_mi(const std::vector<GaussianSpec>& posts, const std::vector<double>& weights,
                                  std::size_t samples, Seed seed, unsigned jobs = 1) {
  require(!posts.empty(), "need at least one post-distribution");
  require(posts.size() == weights.size(), "one weight per post-distribution");
  double wsum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "mixture weights must be non-negative");
    wsum += w;
  }
  require(std::abs(wsum - 1.0) < 1e-9, "mixture weights must sum to 1");
  require(samples >= 1, "need at least one Monte-Carlo sample");
  const std::size_t c = posts.size();
  for (const auto& p : posts)
    if (p.k() != posts[0].k()) throw ShapeError("post-distributions differ in dimension");
  MixtureMi out;
  out.samples_per_component = samples;
  out.per_component = Vector::Zero(static_cast<Eigen::Index>(c));
  if (c == 1) return out;

  // log pi_j - (1/2)(log|Sigma_j| + k log 2 pi), shared by every evaluation.
  std::vector<double> log_norm(c);
  for (std::size_t j = 0; j < c; ++j)
    log_norm[j] = (weights[j] > 0.0 ? std::log(weights[j]) : -INFINITY) -
                  0.5 * (posts[j].logdet() + static_cast<double>(posts[j].k()) * kLog2Pi);
  const bool scalar = posts[0].k() == 1;
  std::vector<double> mu(c), inv_var(c);
  if (scalar)
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = posts[j].mean()[0];
      inv_var[j] = 1.0 / posts[j].covariance()(0, 0);
    }

  parallel_for(c, jobs, [&](std::size_t i) {
    if (weights[i] == 0.0) return;
    const Matrix z = detail::standard_draws(posts[i].k(), samples, derive(seed, i), false);
    const Matrix l = posts[i].factor();
    const double own_norm = -0.5 * (posts[i].logdet() + static_cast<double>(posts[i].k()) * kLog2Pi);
    Vector terms(static_cast<Eigen::Index>(c));
    double acc = 0.0;
    for (Eigen::Index s = 0; s < z.cols(); ++s) {
      const Vector w = posts[i].mean() + l * z.col(s);
      if (scalar) {
        for (std::size_t j = 0; j < c; ++j) {
          const double d = w[0] - mu[j];
          terms[static_cast<Eigen::Index>(j)] = log_norm[j] - 0.5 * d * d * inv_var[j];
        }
      } else {
        for (std::size_t j = 0; j < c; ++j)
          terms[static_cast<Eigen::Index>(j)] = log_norm[j] - 0.5 * posts[j].mahalanobis2(w);
      }
      acc += own_norm - 0.5 * z.col(s).squaredNorm() - log_sum_exp(terms);
    }
    out.per_component[static_cast<Eigen::Index>(i)] = acc / static_cast<double>(samples);
  });
  for (std::size_t i = 0; i < c; ++i) out.mi_nats += weights[i] * out.per_component[static_cast<Eigen::Index>(i)];
  return out;
}

/// E_D[KL(Q(w|D) || p)] for a Gaussian p; the adapted prior minimizes this.
inline double expected_kl_to(const std::vector<GaussianSpec>& posts, const std::vector<double>& weights,
                             const GaussianSpec& p) {
  require(posts.size() == weights.size(), "one weight per post-distribution");
  double acc = 0.0;
  for (std::size_t i = 0; i < posts.size(); ++i) acc += weights[i] * kl_gaussians(posts[i], p);
  return acc;
}

// ---------------------------------------------------------------------------
// Fisher-based approximations of mutual information
// ---------------------------------------------------------------------------

/// Result of a Fisher-based MI approximation. `value` is clamped at 0;
/// `raw` is the unclamped approximation.
struct ApproxMi {
  double value = 0.0;
  double raw = 0.0;
  bool clamped = false;
  bool damped = false;
  double damping = 0.0;
  std::vector<double> logdets;
};

namespace detail {

inline void require_psd(const Matrix& f, const char* what) {
  require(f.rows() == f.cols() && f.rows() > 0, std::string(what) + " must be a non-empty square matrix");
  if ((f - f.transpose()).norm() > 1e-8 * std::max(1.0, f.norm()))
    throw ArgumentError(std::string(what) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (f + f.transpose()), Eigen::EigenvaluesOnly);
  const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  if (es.eigenvalues().minCoeff() < -1e-8 * scale) throw ArgumentError(std::string(what) + " is not PSD");
}

/// log|F| by eigenvalues; -inf when F is singular.
inline double psd_logdet(const Matrix& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (f + f.transpose()), Eigen::EigenvaluesOnly);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double l = es.eigenvalues()[i];
    if (!(l > 0.0)) return -INFINITY;
    acc += std::log(l);
  }
  return acc;
}

inline ApproxMi finish_approx(double entropy, const std::vector<double>& logdets, std::size_t k) {
  ApproxMi r;
  r.logdets = logdets;
  double mean_term = 0.0;
  for (double ld : logdets) mean_term += 0.5 * (static_cast<double>(k) * (kLog2Pi + 1.0) - ld);
  mean_term /= static_cast<double>(logdets.size());
  r.raw = entropy - mean_term;
  if (!(r.raw >= 0.0)) {
    r.value = 0.0;
    r.clamped = true;
  } else {
    r.value = r.raw;
  }
  return r;
}

}  // namespace detail

/// I(x; y) ~ H(x) - E_x[(1/2) log((2 pi e)^k / |F_{y|x}|)], clamped at 0.
inline ApproxMi brunel_nadal_mi(double entropy_x, const std::vector<Matrix>& fishers) {
  require(!fishers.empty(), "need at least one conditional Fisher");
  const auto k = fishers[0].rows();
  std::vector<double> logdets;
  for (const auto& f : fishers) {
    detail::require_psd(f, "conditional Fisher");
    if (f.rows() != k) throw ShapeError("conditional Fishers differ in dimension");
    logdets.push_back(detail::psd_logdet(f));
  }
  return detail::finish_approx(entropy_x, logdets, static_cast<std::size_t>(k));
}

/// Fisher of N(mu(theta), Sigma(theta)) given the precision Sigma^-1:
/// dmu^T Sigma^-1 dmu + (1/2) tr(Sigma^-1 dSigma_m Sigma^-1 dSigma_n).
inline Matrix gaussian_param_fisher_precision(const Matrix& dmu, const Matrix& precision,
                                              const std::vector<Matrix>* dsigma = nullptr) {
  require(precision.rows() == precision.cols() && precision.rows() == dmu.rows(),
          "dmu rows must match the covariance dimension");
  Matrix f = dmu.transpose() * precision * dmu;
  if (dsigma) {
    require(static_cast<Eigen::Index>(dsigma->size()) == dmu.cols(), "one covariance derivative per parameter");
    std::vector<Matrix> a;
    for (const auto& ds : *dsigma) {
      require(ds.rows() == precision.rows() && ds.cols() == precision.cols(), "covariance derivative shape");
      a.push_back(precision * ds);
    }
    for (Eigen::Index m = 0; m < f.rows(); ++m)
      for (Eigen::Index n = 0; n < f.cols(); ++n)
        f(m, n) += 0.5 * (a[static_cast<std::size_t>(m)] * a[static_cast<std::size_t>(n)]).trace();
  }
  return 0.5 * (f + f.transpose());
}

inline Matrix gaussian_param_fisher(const Matrix& dmu, const Matrix& sigma,
                                    const std::optional<std::vector<Matrix>>& dsigma = std::nullopt) {
  require(sigma.rows() == sigma.cols(), "covariance must be square");
  Eigen::LLT<Matrix> llt(0.5 * (sigma + sigma.transpose()));
  if (llt.info() != Eigen::Success) throw ArgumentError("covariance is singular or not positive definite");
  const Matrix prec = llt.solve(Matrix::Identity(sigma.rows(), sigma.cols()));
  return gaussian_param_fisher_precision(dmu, prec, dsigma ? &*dsigma : nullptr);
}

/// Stability data for one training set: J = d w* / d(dataset parameters)
/// (k x p) and the weight Fisher F_w (k x k) at w*.
struct StabilitySample {
  Matrix jacobian;
  Matrix fisher;
};

/// I(w; D) ~ H(D) - E_D[(1/2) log((2 pi e)^p / |J^T (F_w / beta) J|)], the
/// Gaussian Fisher of N(w*(D), beta F_w^-1) in the p dataset parameters.
/// Singular conditional Fishers are damped by 1e-8 times the mean trace.
inline ApproxMi shannon_fisher_approx(double entropy_d, const std::vector<StabilitySample>& samples, double beta) {
  require(!samples.empty(), "need at least one dataset");
  require(beta > 0.0, "beta must be positive");
  const auto p = samples[0].jacobian.cols();
  std::vector<Matrix> conditional;
  double mean_trace = 0.0;
  for (const auto& s : samples) {
    require(s.jacobian.cols() == p, "Jacobians differ in dataset-parameter dimension");
    require(s.fisher.rows() == s.jacobian.rows(), "Fisher dimension does not match the Jacobian");
    detail::require_psd(s.fisher, "weight Fisher");
    conditional.push_back(gaussian_param_fisher_precision(s.jacobian, s.fisher / beta));
    mean_trace += conditional.back().trace();
  }
  mean_trace /= static_cast<double>(samples.size());
  const double eps = 1e-8 * mean_trace / static_cast<double>(p);
  std::vector<double> logdets;
  bool damped = false;
  for (auto& m : conditional) {
    double ld = detail::psd_logdet(m);
    if (!std::isfinite(ld) && eps > 0.0) {
      m.diagonal().array() += eps;
      ld = detail::psd_logdet(m);
      damped = true;
    }
    logdets.push_back(ld);
  }
  auto r = detail::finish_approx(entropy_d, logdets, static_cast<std::size_t>(p));
  r.damped = damped;
  r.damping = damped ? eps : 0.0;
  return r;
}

}  // namespace nninfo
