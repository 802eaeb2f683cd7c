#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.
// Nothing here calls into the code under test except for plain data types.

#include "nninfo/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace nninfo::testing {

/// |a - b| / max(|a|, |b|, 1e-5). Central differences at h = 1e-5 carry an
/// absolute error near 1e-10, so coordinates below the floor are compared
/// absolutely.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

inline double max_rel_err(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline double max_rel_err(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) worst = std::max(worst, rel_err(a(i, j), b(i, j)));
  return worst;
}

/// Central differences with h = 1e-5 max(1, |w_i|).
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& w) {
  Vector g(w.size());
  Vector wp = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(w[i]));
    wp[i] = w[i] + h;
    const double fp = f(wp);
    wp[i] = w[i] - h;
    const double fm = f(wp);
    wp[i] = w[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Jacobian of a vector map by central differences (rows = outputs).
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& w) {
  const Vector f0 = f(w);
  Matrix j(f0.size(), w.size());
  Vector wp = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(w[i]));
    wp[i] = w[i] + h;
    const Vector fp = f(wp);
    wp[i] = w[i] - h;
    const Vector fm = f(wp);
    wp[i] = w[i];
    j.col(i) = (fp - fm) / (2.0 * h);
  }
  return j;
}

/// Raw network outputs by explicit loops over the documented flat layout:
/// W_l is sizes[l] x sizes[l-1] row-major followed by b_l.
inline std::vector<double> naive_outputs(const ModelSpec& m, const Vector& w, const std::vector<double>& x,
                                         std::size_t upto = 0) {
  const std::size_t last = upto == 0 ? m.sizes.size() - 1 : upto;
  std::vector<double> a = x;
  std::size_t off = 0;
  for (std::size_t l = 1; l <= last; ++l) {
    const std::size_t in = m.sizes[l - 1], out = m.sizes[l];
    std::vector<double> z(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += w[static_cast<Eigen::Index>(off + j * in + i)] * a[i];
      z[j] = s;
    }
    off += out * in;
    if (m.bias) {
      for (std::size_t j = 0; j < out; ++j) z[j] += w[static_cast<Eigen::Index>(off + j)];
      off += out;
    }
    if (l < m.sizes.size() - 1) {
      for (double& v : z) {
        switch (m.activation) {
          case Activation::Tanh: v = std::tanh(v); break;
          case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
          case Activation::Linear: break;
        }
      }
    }
    a = std::move(z);
  }
  return a;
}

/// Class probabilities from raw outputs by the textbook formulas.
inline std::vector<double> naive_probabilities(const ModelSpec& m, const std::vector<double>& out) {
  if (m.head == Head::SigmoidXent) {
    const double p1 = 1.0 / (1.0 + std::exp(-out[0]));
    return {1.0 - p1, p1};
  }
  double mx = out[0];
  for (double v : out) mx = std::max(mx, v);
  std::vector<double> p(out.size());
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (p[i] = std::exp(out[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

/// Mean loss by explicit loops: cross-entropy or squared error.
inline double naive_loss(const ModelSpec& m, const Vector& w, const LabeledDataset& d) {
  double total = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::vector<double> x(d.dim());
    for (std::size_t c = 0; c < d.dim(); ++c) x[c] = d.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    const auto out = naive_outputs(m, w, x);
    if (m.head == Head::SquaredError) {
      const double e = out[0] - d.targets[static_cast<Eigen::Index>(r)];
      total += e * e;
    } else if (m.head == Head::SigmoidXent) {
      // softplus(-z) for label 1, softplus(z) for label 0; log(1 - p) loses
      // every digit once the logit is large.
      const double z = d.labels[r] == 1 ? -out[0] : out[0];
      total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    } else {
      total -= std::log(naive_probabilities(m, out)[static_cast<std::size_t>(d.labels[r])]);
    }
  }
  return total / static_cast<double>(d.size());
}

/// Random inputs ~ N(0, 1) with labels or targets drawn to match the head.
inline LabeledDataset random_dataset(const ModelSpec& m, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  LabeledDataset d;
  d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m.input_dim()));
  for (Eigen::Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = normal(rng);
  if (m.head == Head::SquaredError) {
    d.targets.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < d.targets.size(); ++i) d.targets[i] = normal(rng);
  } else {
    std::uniform_int_distribution<int> label(0, static_cast<int>(m.num_classes()) - 1);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(label(rng));
  }
  return d;
}

inline WeightVector random_weights(const ModelSpec& m, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Vector v(static_cast<Eigen::Index>(m.num_params()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * normal(rng);
  return WeightVector(v, m.layout());
}

/// Random fully-connected architecture with 1-3 layers of width 1-5.
inline ModelSpec random_model(std::mt19937_64& rng, Activation act, Head head) {
  std::uniform_int_distribution<std::size_t> width(1, 5), depth(1, 3), classes(2, 4);
  ModelSpec m;
  m.activation = act;
  m.head = head;
  m.sizes.push_back(width(rng));
  const std::size_t layers = depth(rng);
  for (std::size_t l = 1; l < layers; ++l) m.sizes.push_back(width(rng));
  m.sizes.push_back(head == Head::SoftmaxXent ? classes(rng) : 1);
  return m;
}

/// Smallest |pre-activation| over hidden units and samples; ReLU finite
/// differences are only meaningful away from the kink.
inline double min_abs_preactivation(const ModelSpec& m, const Vector& w, const RowMatrix& x) {
  double best = INFINITY;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> a(x.row(r).data(), x.row(r).data() + x.cols());
    std::size_t off = 0;
    for (std::size_t l = 1; l + 1 < m.sizes.size(); ++l) {
      const std::size_t in = m.sizes[l - 1], out = m.sizes[l];
      std::vector<double> z(out, 0.0);
      for (std::size_t j = 0; j < out; ++j) {
        for (std::size_t i = 0; i < in; ++i) z[j] += w[static_cast<Eigen::Index>(off + j * in + i)] * a[i];
      }
      off += out * in;
      if (m.bias) {
        for (std::size_t j = 0; j < out; ++j) z[j] += w[static_cast<Eigen::Index>(off + j)];
        off += out;
      }
      for (double& v : z) {
        best = std::min(best, std::abs(v));
        v = v > 0.0 ? v : 0.0;
      }
      a = std::move(z);
    }
  }
  return best;
}

inline std::vector<double> row_of(const RowMatrix& x, Eigen::Index r) {
  return std::vector<double>(x.row(r).data(), x.row(r).data() + x.cols());
}

}  // namespace nninfo::testing
