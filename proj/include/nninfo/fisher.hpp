#pragma once

// Fisher Information estimators and the Hessian-Fisher decomposition.

#include "nninfo/core.hpp"
#include "nninfo/model.hpp"
#include "nninfo/ndcore.hpp"

namespace nninfo {

enum class FisherForm { Full, Diagonal, Trace };
enum class FisherMethod { ExactExpectation, MonteCarlo };

inline const char* to_string(FisherForm f) {
  switch (f) {
    case FisherForm::Full: return "full";
    case FisherForm::Diagonal: return "diagonal";
    case FisherForm::Trace: return "trace";
  }
  return "?";
}

inline const char* to_string(FisherMethod m) {
  return m == FisherMethod::ExactExpectation ? "exact-expectation" : "mc-sampled";
}

struct FisherEstimate {
  FisherForm form = FisherForm::Full;
  FisherMethod method = FisherMethod::ExactExpectation;
  std::size_t k = 0;
  std::size_t mc_samples = 0;
  double damping = 0.0;
  Matrix full;          // form == Full
  Vector diagonal;      // form == Diagonal
  double trace_value = 0.0;

  double trace() const {
    switch (form) {
      case FisherForm::Full: return full.trace();
      case FisherForm::Diagonal: return diagonal.sum();
      case FisherForm::Trace: return trace_value;
    }
    return 0.0;
  }

  const Matrix& matrix() const {
    if (form != FisherForm::Full) throw FormError("operation needs a full Fisher matrix");
    return full;
  }

  static FisherEstimate from_matrix(Matrix f, FisherMethod method = FisherMethod::ExactExpectation) {
    FisherEstimate e;
    e.k = static_cast<std::size_t>(f.rows());
    e.full = std::move(f);
    e.method = method;
    return e;
  }
};

/// Classes summed exactly up to this count; sampled above it.
inline constexpr std::size_t kExactClassLimit = 32;

namespace detail {

inline void check_classifier_fisher(const ModelSpec& m) {
  m.validate();
  if (!m.is_classifier())
    throw ArgumentError("regressor head: use fisher_gaussian (closed-form Gaussian likelihood)");
}

inline constexpr Eigen::Index kFisherChunk = 128;

/// Calls sink(G, first_row) with per-sample score rows weighted by sqrt(p_y),
/// one block per class and input chunk, in a fixed order.
template <class Sink>
void for_each_weighted_score_block(const ModelSpec& m, const WeightVector& w, const RowMatrix& x, Sink&& sink,
                                   Eigen::Index chunk = kFisherChunk) {
  const std::size_t classes = m.num_classes();
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, x.rows() - start);
    const RowMatrix xs = x.middleRows(start, len);
    const auto c = forward_cache(m, w, xs, output_layer(m));
    const RowMatrix p = class_probabilities(m, c.post.back());
    for (std::size_t y = 0; y < classes; ++y) {
      const std::vector<int> labels(static_cast<std::size_t>(len), static_cast<int>(y));
      const auto b = backward(m, w, c, score_upstream(m, p, labels));
      RowMatrix g = per_row_weight_grads(m, c, b);
      for (Eigen::Index i = 0; i < len; ++i) g.row(i) *= std::sqrt(p(i, static_cast<Eigen::Index>(y)));
      sink(g, start);
    }
  }
}

}  // namespace detail

/// F = (1/N) sum_x sum_y p_w(y|x) g g^T with g = grad log p_w(y|x); labels
/// never enter, only inputs.
inline FisherEstimate fisher_exact(const ModelSpec& m, const WeightVector& w, const RowMatrix& inputs) {
  detail::check_classifier_fisher(m);
  require_dense(w.k());
  require(inputs.rows() > 0, "Fisher needs at least one input");
  const auto k = static_cast<Eigen::Index>(w.k());
  Matrix f = Matrix::Zero(k, k);
  detail::for_each_weighted_score_block(m, w, inputs, [&](const RowMatrix& g, Eigen::Index) {
    f.selfadjointView<Eigen::Lower>().rankUpdate(g.transpose());
  });
  Matrix full = f.selfadjointView<Eigen::Lower>();
  full /= static_cast<double>(inputs.rows());
  return FisherEstimate::from_matrix(std::move(full));
}

inline FisherEstimate fisher_exact(const ModelSpec& m, const WeightVector& w, const Tensor& inputs) {
  return fisher_exact(m, w, inputs.as_rows());
}

/// tr F by exact class sums without forming F.
inline FisherEstimate fisher_exact_trace(const ModelSpec& m, const WeightVector& w, const RowMatrix& inputs) {
  detail::check_classifier_fisher(m);
  require(inputs.rows() > 0, "Fisher needs at least one input");
  double acc = 0.0;
  detail::for_each_weighted_score_block(m, w, inputs, [&](const RowMatrix& g, Eigen::Index) { acc += g.squaredNorm(); });
  FisherEstimate e;
  e.form = FisherForm::Trace;
  e.k = w.k();
  e.trace_value = acc / static_cast<double>(inputs.rows());
  return e;
}

namespace detail {

/// Per-input class counts from m draws of y ~ p_w(y|x).
inline std::vector<std::vector<std::size_t>> sample_label_counts(const RowMatrix& p, std::size_t draws, Rng& rng) {
  std::vector<std::vector<std::size_t>> counts(static_cast<std::size_t>(p.rows()),
                                               std::vector<std::size_t>(static_cast<std::size_t>(p.cols()), 0));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (std::size_t s = 0; s < draws; ++s) {
      const double u = Normal::uniform01(rng);
      double acc = 0.0;
      Eigen::Index y = p.cols() - 1;
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        acc += p(i, j);
        if (u < acc) {
          y = j;
          break;
        }
      }
      ++counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(y)];
    }
  }
  return counts;
}

/// Per-sample score rows weighted by sqrt(n_y / m) for sampled labels.
template <class Sink>
void for_each_sampled_score_block(const ModelSpec& m, const WeightVector& w, const RowMatrix& x, std::size_t draws,
                                  Seed seed, Sink&& sink) {
  Rng rng = make_rng(seed);
  const std::size_t classes = m.num_classes();
  for (Eigen::Index start = 0; start < x.rows(); start += kFisherChunk) {
    const Eigen::Index len = std::min(kFisherChunk, x.rows() - start);
    const RowMatrix xs = x.middleRows(start, len);
    const auto c = forward_cache(m, w, xs, output_layer(m));
    const RowMatrix p = class_probabilities(m, c.post.back());
    const auto counts = sample_label_counts(p, draws, rng);
    for (std::size_t y = 0; y < classes; ++y) {
      const std::vector<int> labels(static_cast<std::size_t>(len), static_cast<int>(y));
      const auto b = backward(m, w, c, score_upstream(m, p, labels));
      RowMatrix g = per_row_weight_grads(m, c, b);
      for (Eigen::Index i = 0; i < len; ++i)
        g.row(i) *= std::sqrt(static_cast<double>(counts[static_cast<std::size_t>(i)][y]) / static_cast<double>(draws));
      sink(g);
    }
  }
}

}  // namespace detail

/// Monte-Carlo Fisher with m label draws y ~ p_w(y|x) per input.
inline FisherEstimate fisher_mc(const ModelSpec& m, const WeightVector& w, const RowMatrix& inputs, std::size_t draws,
                                Seed seed) {
  detail::check_classifier_fisher(m);
  require_dense(w.k());
  require(draws >= 1, "Monte-Carlo Fisher needs m >= 1");
  require(inputs.rows() > 0, "Fisher needs at least one input");
  const auto k = static_cast<Eigen::Index>(w.k());
  Matrix f = Matrix::Zero(k, k);
  detail::for_each_sampled_score_block(m, w, inputs, draws, seed, [&](const RowMatrix& g) {
    f.selfadjointView<Eigen::Lower>().rankUpdate(g.transpose());
  });
  Matrix full = f.selfadjointView<Eigen::Lower>();
  full /= static_cast<double>(inputs.rows());
  auto e = FisherEstimate::from_matrix(std::move(full), FisherMethod::MonteCarlo);
  e.mc_samples = draws;
  return e;
}

inline FisherEstimate fisher_mc(const ModelSpec& m, const WeightVector& w, const Tensor& inputs, std::size_t draws,
                                Seed seed) {
  return fisher_mc(m, w, inputs.as_rows(), draws, seed);
}

/// Diagonal (and trace) of F for any k. Classes are summed exactly when
/// C <= 32, otherwise m labels are sampled per input.
inline FisherEstimate fisher_trace_diag(const ModelSpec& m, const WeightVector& w, const RowMatrix& inputs,
                                        std::size_t draws, Seed seed) {
  detail::check_classifier_fisher(m);
  require(inputs.rows() > 0, "Fisher needs at least one input");
  const auto k = static_cast<Eigen::Index>(w.k());
  Vector diag = Vector::Zero(k);
  FisherEstimate e;
  e.form = FisherForm::Diagonal;
  e.k = w.k();
  const Eigen::Index chunk = std::max<Eigen::Index>(1, std::min<Eigen::Index>(detail::kFisherChunk, 4'000'000 / std::max<Eigen::Index>(k, 1)));
  if (m.num_classes() <= kExactClassLimit) {
    detail::for_each_weighted_score_block(
        m, w, inputs, [&](const RowMatrix& g, Eigen::Index) { diag += g.array().square().colwise().sum().matrix().transpose(); },
        chunk);
    e.method = FisherMethod::ExactExpectation;
  } else {
    require(draws >= 1, "sampled Fisher diagonal needs m >= 1");
    detail::for_each_sampled_score_block(m, w, inputs, draws, seed, [&](const RowMatrix& g) {
      diag += g.array().square().colwise().sum().matrix().transpose();
    });
    e.method = FisherMethod::MonteCarlo;
    e.mc_samples = draws;
  }
  e.diagonal = diag / static_cast<double>(inputs.rows());
  e.trace_value = e.diagonal.sum();
  return e;
}

inline FisherEstimate fisher_trace_diag(const ModelSpec& m, const WeightVector& w, const Tensor& inputs,
                                        std::size_t draws, Seed seed) {
  return fisher_trace_diag(m, w, inputs.as_rows(), draws, seed);
}

/// Fisher of a scalar regressor read as N(f_w(x), 1/2):
/// F = (2/N) sum_x J^T J, the Gauss-Newton matrix of the mean squared error.
inline FisherEstimate fisher_gaussian(const ModelSpec& m, const WeightVector& w, const RowMatrix& inputs) {
  require(!m.is_classifier() && m.output_dim() == 1, "Gaussian-likelihood Fisher needs a scalar regressor");
  require_dense(w.k());
  require(inputs.rows() > 0, "Fisher needs at least one input");
  const auto k = static_cast<Eigen::Index>(w.k());
  Matrix f = Matrix::Zero(k, k);
  for (Eigen::Index start = 0; start < inputs.rows(); start += detail::kFisherChunk) {
    const Eigen::Index len = std::min(detail::kFisherChunk, inputs.rows() - start);
    const auto c = forward_cache(m, w, inputs.middleRows(start, len), output_layer(m));
    const auto b = backward(m, w, c, RowMatrix::Ones(len, 1));
    const RowMatrix j = per_row_weight_grads(m, c, b);
    f.selfadjointView<Eigen::Lower>().rankUpdate(j.transpose(), 2.0);
  }
  Matrix full = f.selfadjointView<Eigen::Lower>();
  full /= static_cast<double>(inputs.rows());
  return FisherEstimate::from_matrix(std::move(full));
}

/// 1e-8 * trace(F) / k.
inline double default_damping(const Matrix& f) {
  return 1e-8 * f.trace() / static_cast<double>(f.rows());
}

struct LogDet {
  double value = 0.0;
  double damping = 0.0;
};

/// log|F + eps I| by Cholesky.
inline LogDet logdet_damped(const FisherEstimate& f, double eps) {
  if (f.form != FisherForm::Full) throw FormError("log-determinant needs a full Fisher matrix");
  require(eps > 0.0, "damping must be positive");
  Matrix a = f.full;
  a.diagonal().array() += eps;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("damped Fisher is not positive definite");
  const Matrix& l = llt.matrixL();
  return {2.0 * l.diagonal().array().log().sum(), eps};
}

inline LogDet logdet_damped(const FisherEstimate& f) {
  const double eps = default_damping(f.matrix());
  return logdet_damped(f, eps > 0.0 ? eps : 1e-300);
}

/// Smallest eigenvalue relative to the spectral scale.
inline double min_relative_eigenvalue(const Matrix& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(f, Eigen::EigenvaluesOnly);
  const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
  return scale > 0.0 ? es.eigenvalues().minCoeff() / scale : 0.0;
}

struct HessianFisherResidual {
  Matrix residual;  // H - F
  double relative = 0.0;
  Matrix hessian;
  Matrix fisher;
};

/// H - F with H from finite differences and F exact (classifiers) or the
/// Gaussian-likelihood Fisher (regressors); relative = |H - F|_F / |H|_F.
inline HessianFisherResidual hessian_fisher_residual(const ModelSpec& m, const WeightVector& w,
                                                     const LabeledDataset& d) {
  require_dense(w.k());
  HessianFisherResidual r;
  r.hessian = hessian_fd(m, w, d);
  r.fisher = m.is_classifier() ? fisher_exact(m, w, d.inputs).full : fisher_gaussian(m, w, d.inputs).full;
  r.residual = r.hessian - r.fisher;
  const double hn = r.hessian.norm();
  r.relative = hn > 0.0 ? r.residual.norm() / hn : (r.residual.norm() > 0.0 ? INFINITY : 0.0);
  return r;
}

}  // namespace nninfo
