#pragma once

// Forward evaluation and reverse-mode derivatives for fully-connected
// networks, plus finite-difference second-order probes.

#include "nninfo/core.hpp"
#include "nninfo/model.hpp"

namespace nninfo {

namespace detail {

inline Eigen::Map<const RowMatrix> layer_weights(const ModelSpec& m, const Vector& w, std::size_t l) {
  return {w.data() + m.weight_offset(l), static_cast<Eigen::Index>(m.sizes[l]),
          static_cast<Eigen::Index>(m.sizes[l - 1])};
}

inline void apply_activation(Activation a, RowMatrix& z) {
  switch (a) {
    case Activation::Tanh: z = z.array().tanh(); break;
    case Activation::Relu: z = z.array().max(0.0); break;
    case Activation::Linear: break;
  }
}

inline RowMatrix activation_slope(Activation a, const RowMatrix& pre) {
  switch (a) {
    case Activation::Tanh: return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::Relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Linear: return RowMatrix::Ones(pre.rows(), pre.cols());
  }
  return {};
}

inline void check_input(const ModelSpec& m, const RowMatrix& x) {
  m.validate();
  if (static_cast<std::size_t>(x.cols()) != m.input_dim())
    throw ShapeError("input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(m.input_dim()));
}

inline void check_weights(const ModelSpec& m, const WeightVector& w) {
  if (w.k() != m.num_params())
    throw ShapeError("weight vector has k = " + std::to_string(w.k()) + ", model needs " +
                     std::to_string(m.num_params()));
}

}  // namespace detail

/// Layer identifier: 1..L. Hidden layers (l < L) expose post-activation
/// values; the last layer exposes the raw outputs (logits for classifiers).
struct LayerId {
  std::size_t index = 0;
};

inline LayerId output_layer(const ModelSpec& m) { return LayerId{m.layers()}; }

/// Activations of a batch, kept for backpropagation.
struct ForwardCache {
  std::size_t upto = 0;
  std::vector<RowMatrix> pre;   // pre[l], l = 1..upto (pre[0] unused)
  std::vector<RowMatrix> post;  // post[0] = inputs
};

inline ForwardCache forward_cache(const ModelSpec& m, const WeightVector& w, const RowMatrix& x,
                                  LayerId upto) {
  detail::check_input(m, x);
  detail::check_weights(m, w);
  if (upto.index < 1 || upto.index > m.layers())
    throw ArgumentError("layer " + std::to_string(upto.index) + " outside [1, " +
                        std::to_string(m.layers()) + "]");
  ForwardCache c;
  c.upto = upto.index;
  c.pre.resize(upto.index + 1);
  c.post.resize(upto.index + 1);
  c.post[0] = x;
  for (std::size_t l = 1; l <= upto.index; ++l) {
    RowMatrix z = c.post[l - 1] * detail::layer_weights(m, w.values(), l).transpose();
    if (m.bias) {
      Eigen::Map<const Eigen::RowVectorXd> b(w.values().data() + m.bias_offset(l),
                                             static_cast<Eigen::Index>(m.sizes[l]));
      z.rowwise() += b;
    }
    c.pre[l] = z;
    if (l < m.layers()) detail::apply_activation(m.activation, z);
    c.post[l] = std::move(z);
  }
  return c;
}

/// Deltas dOut/d(pre_l) for l = 1..upto, given upstream dOut/d(post_upto).
struct BackwardResult {
  std::vector<RowMatrix> delta;
  RowMatrix input_grad;
};

inline BackwardResult backward(const ModelSpec& m, const WeightVector& w, const ForwardCache& c,
                               const RowMatrix& upstream, bool want_input_grad = false) {
  const std::size_t top = c.upto;
  if (upstream.rows() != c.post[top].rows() || upstream.cols() != c.post[top].cols())
    throw ShapeError("upstream gradient shape does not match layer output");
  BackwardResult r;
  r.delta.resize(top + 1);
  r.delta[top] = (top < m.layers())
                     ? RowMatrix(upstream.cwiseProduct(detail::activation_slope(m.activation, c.pre[top])))
                     : upstream;
  for (std::size_t l = top; l >= 2; --l) {
    RowMatrix g = r.delta[l] * detail::layer_weights(m, w.values(), l);
    r.delta[l - 1] = g.cwiseProduct(detail::activation_slope(m.activation, c.pre[l - 1]));
  }
  if (want_input_grad) r.input_grad = r.delta[1] * detail::layer_weights(m, w.values(), 1);
  return r;
}

/// Gradient summed over the batch rows.
inline Vector summed_weight_grad(const ModelSpec& m, const ForwardCache& c, const BackwardResult& b) {
  Vector g = Vector::Zero(static_cast<Eigen::Index>(m.num_params()));
  for (std::size_t l = 1; l <= c.upto; ++l) {
    Eigen::Map<RowMatrix> gw(g.data() + m.weight_offset(l), static_cast<Eigen::Index>(m.sizes[l]),
                             static_cast<Eigen::Index>(m.sizes[l - 1]));
    gw.noalias() = b.delta[l].transpose() * c.post[l - 1];
    if (m.bias)
      g.segment(static_cast<Eigen::Index>(m.bias_offset(l)), static_cast<Eigen::Index>(m.sizes[l])) =
          b.delta[l].colwise().sum().transpose();
  }
  return g;
}

/// One gradient row per batch row (N x k).
inline RowMatrix per_row_weight_grads(const ModelSpec& m, const ForwardCache& c, const BackwardResult& b) {
  const Eigen::Index n = c.post[0].rows();
  RowMatrix out = RowMatrix::Zero(n, static_cast<Eigen::Index>(m.num_params()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t l = 1; l <= c.upto; ++l) {
      const auto rows = static_cast<Eigen::Index>(m.sizes[l]);
      const auto cols = static_cast<Eigen::Index>(m.sizes[l - 1]);
      Eigen::Map<RowMatrix> gw(out.row(i).data() + m.weight_offset(l), rows, cols);
      gw.noalias() = b.delta[l].row(i).transpose() * c.post[l - 1].row(i);
      if (m.bias) out.row(i).segment(static_cast<Eigen::Index>(m.bias_offset(l)), rows) = b.delta[l].row(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

/// Class probabilities (N x C) from raw outputs.
inline RowMatrix class_probabilities(const ModelSpec& m, const RowMatrix& out) {
  if (m.head == Head::SigmoidXent) {
    RowMatrix p(out.rows(), 2);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double s = out(i, 0);
      const double p1 = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      p(i, 0) = 1.0 - p1;
      p(i, 1) = p1;
    }
    return p;
  }
  RowMatrix p = out;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// log p(y | x) for one row of raw outputs.
inline double log_prob(const ModelSpec& m, const Eigen::Ref<const Eigen::RowVectorXd>& out, int y) {
  if (m.head == Head::SigmoidXent) {
    const double s = y == 1 ? out(0) : -out(0);
    // log sigmoid(s)
    return s >= 0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s));
  }
  const double mx = out.maxCoeff();
  return out(y) - mx - std::log((out.array() - mx).exp().sum());
}

/// d log p(y|x) / d(outputs) for each row: e_y - p (softmax), y - sigmoid(s).
inline RowMatrix score_upstream(const ModelSpec& m, const RowMatrix& probs, const std::vector<int>& y) {
  if (m.head == Head::SigmoidXent) {
    RowMatrix u(probs.rows(), 1);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) u(i, 0) = static_cast<double>(y[static_cast<std::size_t>(i)]) - probs(i, 1);
    return u;
  }
  RowMatrix u = -probs;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) u(i, y[static_cast<std::size_t>(i)]) += 1.0;
  return u;
}

inline void check_dataset(const ModelSpec& m, const LabeledDataset& d) {
  m.validate();
  if (d.size() == 0) throw ArgumentError("dataset is empty");
  if (m.is_classifier() != d.is_classification())
    throw ArgumentError("dataset targets do not match the model head");
  if (!m.is_classifier() && m.output_dim() != 1)
    throw ArgumentError("squared-error loss needs a scalar output");
  d.validate(m.is_classifier() ? std::optional<std::size_t>(m.num_classes()) : std::nullopt);
  if (d.dim() != m.input_dim()) throw ShapeError("dataset dimension does not match model input");
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Class probabilities for classifiers, raw outputs for regressors.
inline Tensor forward(const ModelSpec& m, const WeightVector& w, const Tensor& x) {
  const RowMatrix rows = x.as_rows();
  const auto c = forward_cache(m, w, rows, output_layer(m));
  const RowMatrix& out = c.post.back();
  if (!out.allFinite()) throw NumericalError("non-finite network output");
  if (m.is_classifier()) return Tensor::from(class_probabilities(m, out));
  return Tensor::from(out);
}

inline RowMatrix raw_outputs(const ModelSpec& m, const WeightVector& w, const RowMatrix& x) {
  return forward_cache(m, w, x, output_layer(m)).post.back();
}

/// Mean cross-entropy (classifiers) or mean squared error (regressors).
inline double loss(const ModelSpec& m, const WeightVector& w, const LabeledDataset& d) {
  check_dataset(m, d);
  const RowMatrix out = raw_outputs(m, w, d.inputs);
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (m.is_classifier()) {
      total -= log_prob(m, out.row(i), d.labels[static_cast<std::size_t>(i)]);
    } else {
      const double r = out(i, 0) - d.targets[i];
      total += r * r;
    }
  }
  return total / static_cast<double>(out.rows());
}

inline double accuracy(const ModelSpec& m, const WeightVector& w, const LabeledDataset& d) {
  check_dataset(m, d);
  require(m.is_classifier(), "accuracy is defined for classifiers only");
  const RowMatrix p = class_probabilities(m, raw_outputs(m, w, d.inputs));
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg;
    p.row(i).maxCoeff(&arg);
    if (arg == d.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

/// Loss value and gradient of the mean loss over the given rows of `d`.
inline std::pair<double, Vector> loss_and_grad(const ModelSpec& m, const WeightVector& w,
                                               const LabeledDataset& d) {
  check_dataset(m, d);
  const auto c = forward_cache(m, w, d.inputs, output_layer(m));
  const RowMatrix& out = c.post.back();
  const double n = static_cast<double>(d.size());
  RowMatrix up;
  double total = 0.0;
  if (m.is_classifier()) {
    const RowMatrix p = class_probabilities(m, out);
    up = -score_upstream(m, p, d.labels) / n;
    for (Eigen::Index i = 0; i < out.rows(); ++i) total -= log_prob(m, out.row(i), d.labels[static_cast<std::size_t>(i)]);
  } else {
    RowMatrix r = out.col(0) - d.targets;
    total = r.squaredNorm();
    up = 2.0 * r / n;
  }
  const auto b = backward(m, w, c, up);
  return {total / n, summed_weight_grad(m, c, b)};
}

inline WeightVector grad_loss(const ModelSpec& m, const WeightVector& w, const LabeledDataset& d) {
  return w.with_values(loss_and_grad(m, w, d).second);
}

/// Gradient of log p_w(y|x) with respect to w.
inline WeightVector per_sample_loglik_grad(const ModelSpec& m, const WeightVector& w, const Tensor& x,
                                           int y) {
  require(m.is_classifier(), "per-sample class scores need a classifier head");
  if (y < 0 || static_cast<std::size_t>(y) >= m.num_classes())
    throw ArgumentError("label " + std::to_string(y) + " is not a valid class index");
  const RowMatrix row = x.as_rows();
  if (row.rows() != 1) throw ShapeError("expected a single input");
  const auto c = forward_cache(m, w, row, output_layer(m));
  const RowMatrix p = class_probabilities(m, c.post.back());
  const auto b = backward(m, w, c, score_upstream(m, p, {y}));
  return w.with_values(summed_weight_grad(m, c, b));
}

/// Regression variant: log-likelihood of N(f_w(x), 1/2), i.e. -(f_w(x) - y)^2.
inline WeightVector per_sample_loglik_grad(const ModelSpec& m, const WeightVector& w, const Tensor& x,
                                           double y) {
  require(!m.is_classifier() && m.output_dim() == 1, "real targets need a scalar regressor");
  const RowMatrix row = x.as_rows();
  if (row.rows() != 1) throw ShapeError("expected a single input");
  const auto c = forward_cache(m, w, row, output_layer(m));
  RowMatrix up(1, 1);
  up(0, 0) = -2.0 * (c.post.back()(0, 0) - y);
  const auto b = backward(m, w, c, up);
  return w.with_values(summed_weight_grad(m, c, b));
}

/// Jacobian (dim z x k) of layer activations with respect to the weights.
inline Matrix weight_jacobian(const ModelSpec& m, const WeightVector& w, const Tensor& x, LayerId layer) {
  const RowMatrix row = x.as_rows();
  if (row.rows() != 1) throw ShapeError("expected a single input");
  if (layer.index < 1 || layer.index > m.layers()) throw ArgumentError("invalid layer identifier");
  const auto dz = static_cast<Eigen::Index>(m.sizes[layer.index]);
  const RowMatrix rep = row.replicate(dz, 1);
  const auto c = forward_cache(m, w, rep, layer);
  const auto b = backward(m, w, c, RowMatrix::Identity(dz, dz));
  return per_row_weight_grads(m, c, b);
}

/// Jacobian (dim z x dim x) of layer activations with respect to the input.
inline Matrix input_jacobian(const ModelSpec& m, const WeightVector& w, const Tensor& x, LayerId layer) {
  const RowMatrix row = x.as_rows();
  if (row.rows() != 1) throw ShapeError("expected a single input");
  if (layer.index < 1 || layer.index > m.layers()) throw ArgumentError("invalid layer identifier");
  const auto dz = static_cast<Eigen::Index>(m.sizes[layer.index]);
  const RowMatrix rep = row.replicate(dz, 1);
  const auto c = forward_cache(m, w, rep, layer);
  return backward(m, w, c, RowMatrix::Identity(dz, dz), true).input_grad;
}

inline RowMatrix layer_activations(const ModelSpec& m, const WeightVector& w, const RowMatrix& x,
                                   LayerId layer) {
  return forward_cache(m, w, x, layer).post.back();
}

// ---------------------------------------------------------------------------
// Finite-difference Hessian
// ---------------------------------------------------------------------------

inline double fd_step(double wi) { return 1e-5 * std::max(1.0, std::abs(wi)); }

/// Unsymmetrized central-difference Jacobian of a gradient map.
template <class GradFn>
Matrix hessian_fd_raw(GradFn&& grad, const Vector& w) {
  const auto k = static_cast<std::size_t>(w.size());
  require_dense(k);
  Matrix h(w.size(), w.size());
  Vector wp = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double step = fd_step(w[i]);
    wp[i] = w[i] + step;
    const Vector gp = grad(wp);
    wp[i] = w[i] - step;
    const Vector gm = grad(wp);
    wp[i] = w[i];
    h.col(i) = (gp - gm) / (2.0 * step);
  }
  return h;
}

template <class GradFn>
Matrix hessian_fd_generic(GradFn&& grad, const Vector& w) {
  const Matrix h = hessian_fd_raw(std::forward<GradFn>(grad), w);
  return 0.5 * (h + h.transpose());
}

/// H = d^2 L_D / dw^2 by central differences of grad_loss, symmetrized.
inline Matrix hessian_fd(const ModelSpec& m, const WeightVector& w, const LabeledDataset& d) {
  check_dataset(m, d);
  require_dense(w.k());
  return hessian_fd_generic(
      [&](const Vector& v) { return loss_and_grad(m, w.with_values(v), d).second; }, w.values());
}

}  // namespace nninfo
