#pragma once

// Effective information in the activations under the weight perturbation
// n ~ N(0, beta F_w^-1).

#include "nninfo/core.hpp"
#include "nninfo/fisher.hpp"
#include "nninfo/infoweights.hpp"
#include "nninfo/ndcore.hpp"

#include <optional>

namespace nninfo {

/// Cholesky factor of a symmetric matrix. The undamped factorization is used
/// when it succeeds with a reciprocal condition above 1e-12; otherwise the
/// relative damping 1e-8 tr(A)/k is added and recorded.
struct PolicyFactor {
  Eigen::LLT<Matrix> llt;
  double damping = 0.0;
};

inline PolicyFactor factor_with_policy(const Matrix& a) {
  require(a.rows() == a.cols() && a.rows() > 0, "expected a non-empty square matrix");
  PolicyFactor out;
  const Matrix sym = 0.5 * (a + a.transpose());
  out.llt.compute(sym);
  if (out.llt.info() == Eigen::Success) {
    const Vector d = out.llt.matrixLLT().diagonal().cwiseAbs2();
    if (d.minCoeff() > 1e-12 * d.maxCoeff()) return out;
  }
  out.damping = 1e-8 * sym.trace() / static_cast<double>(sym.rows());
  if (!(out.damping > 0.0)) throw NumericalError("cannot invert a zero curvature matrix");
  Matrix damped = sym;
  damped.diagonal().array() += out.damping;
  out.llt.compute(damped);
  if (out.llt.info() != Eigen::Success) throw NumericalError("damped matrix is not positive definite");
  return out;
}

struct PerturbedActivations {
  std::vector<Tensor> samples;
  double damping = 0.0;  // added to F_w before inversion
};

/// m samples z_n = f_{w+n}(x) at `layer` with n ~ N(0, beta (F_w + eps I)^-1).
inline PerturbedActivations perturbed_activations(const ModelSpec& m, const WeightVector& w, const FisherEstimate& f_w,
                                                  double beta, const Tensor& x, std::size_t draws, Seed seed,
                                                  std::optional<LayerId> layer = std::nullopt) {
  require(beta >= 0.0, "beta must be non-negative");
  require(draws >= 1, "need at least one sample");
  const Matrix& f = f_w.matrix();
  require(static_cast<std::size_t>(f.rows()) == w.k(), "Fisher dimension does not match the weights");
  const LayerId at = layer.value_or(output_layer(m));
  const RowMatrix row = x.as_rows();
  if (row.rows() != 1) throw ShapeError("expected a single input");
  const auto pf = factor_with_policy(f);
  PerturbedActivations out;
  out.damping = pf.damping;
  Rng rng = make_rng(seed);
  Normal normal;
  Vector z(f.rows());
  const double scale = std::sqrt(beta);
  for (std::size_t s = 0; s < draws; ++s) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    // (L L^T)^-1 = L^-T L^-1, so L^-T z has the inverse as covariance.
    const Vector n = scale * pf.llt.matrixU().solve(z);
    const RowMatrix act = layer_activations(m, w.with_values(w.values() + n), row, at);
    out.samples.push_back(Tensor::from(RowMatrix(act)));
  }
  return out;
}

/// Sigma*_w = beta (F_w + eps I)^-1 under the inversion policy.
inline std::pair<Matrix, double> perturbation_covariance(const FisherEstimate& f_w, double beta) {
  const Matrix& f = f_w.matrix();
  const auto pf = factor_with_policy(f);
  Matrix s = beta * pf.llt.solve(Matrix::Identity(f.rows(), f.cols()));
  return {0.5 * (s + s.transpose()), pf.damping};
}

struct ConditionalFisher {
  Matrix value;                 // F_{z|x}, dim x by dim x
  Matrix activation_covariance; // J_f Sigma*_w J_f^T
  double weight_damping = 0.0;
  double activation_damping = 0.0;
};

/// F_{z|x} = (d f / d x)^T (J_f Sigma*_w J_f^T)^-1 (d f / d x).
inline ConditionalFisher fisher_z_given_x(const ModelSpec& m, const WeightVector& w, const FisherEstimate& f_w,
                                          double beta, const Tensor& x, LayerId layer) {
  require(beta > 0.0, "beta must be positive");
  const Matrix jw = weight_jacobian(m, w, x, layer);
  const Matrix jx = input_jacobian(m, w, x, layer);
  ConditionalFisher out;
  auto [sigma, wd] = perturbation_covariance(f_w, beta);
  out.weight_damping = wd;
  out.activation_covariance = jw * sigma * jw.transpose();
  out.activation_covariance = 0.5 * (out.activation_covariance + out.activation_covariance.transpose()).eval();
  const auto pf = factor_with_policy(out.activation_covariance);
  out.activation_damping = pf.damping;
  const Matrix v = pf.llt.matrixL().solve(jx);
  out.value = v.transpose() * v;
  return out;
}

struct EffectiveInfoReport {
  double beta = 0.0;
  std::size_t layer = 0;
  std::vector<double> logdets;  // log|F_{z|x}| per probe
  double delta_i = 0.0;
  std::optional<double> entropy_x;
  std::optional<double> i_eff;
  bool clamped = false;
  bool damped = false;
  double max_damping = 0.0;
};

/// delta-I = -mean over probes of (1/2) log((2 pi e)^d / |F_{z|x}|), d = dim x;
/// i-eff = H(x) + delta-I clamped at 0 when H(x) is given.
inline EffectiveInfoReport effective_mi(const ModelSpec& m, const WeightVector& w, const FisherEstimate& f_w,
                                        double beta, const std::vector<Tensor>& probes, LayerId layer,
                                        std::optional<double> entropy_x = std::nullopt) {
  require(!probes.empty(), "probe set must be nonempty");
  EffectiveInfoReport r;
  r.beta = beta;
  r.layer = layer.index;
  r.entropy_x = entropy_x;
  const double d = static_cast<double>(m.input_dim());
  double acc = 0.0;
  for (const auto& x : probes) {
    const auto cf = fisher_z_given_x(m, w, f_w, beta, x, layer);
    double ld = detail::psd_logdet(cf.value);
    double damping = std::max(cf.weight_damping, cf.activation_damping);
    if (!std::isfinite(ld)) {
      const double eps = 1e-8 * cf.value.trace() / d;
      if (eps > 0.0) {
        Matrix a = cf.value;
        a.diagonal().array() += eps;
        ld = detail::psd_logdet(a);
        damping = std::max(damping, eps);
      }
    }
    if (damping > 0.0) r.damped = true;
    r.max_damping = std::max(r.max_damping, damping);
    r.logdets.push_back(ld);
    acc += 0.5 * (d * (kLog2Pi + 1.0) - ld);
  }
  r.delta_i = -acc / static_cast<double>(probes.size());
  if (entropy_x) {
    const double raw = *entropy_x + r.delta_i;
    r.clamped = !(raw >= 0.0);
    r.i_eff = r.clamped ? 0.0 : raw;
  }
  return r;
}

}  // namespace nninfo
