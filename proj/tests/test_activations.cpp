#include "nninfo/activations.hpp"
#include "nninfo/datasets.hpp"
#include "nninfo/fisher.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace nninfo {
namespace {

using testing::fd_jacobian;
using testing::max_rel_err;
using testing::naive_outputs;
using testing::random_weights;

Tensor input(std::initializer_list<double> v) { return Tensor::vector(std::vector<double>(v)); }

Vector as_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

Vector to_std(const Tensor& t) {
  const RowMatrix r = t.as_rows();
  return Eigen::Map<const Vector>(r.data(), r.size());
}

FisherEstimate fisher_of(const Matrix& f) { return FisherEstimate::from_matrix(f); }

// f_w(x) = w x, one weight, no bias.
const ModelSpec kScalar{{1, 1}, Activation::Linear, Head::SquaredError, false};

// --- Jacobians -----------------------------------------------------------

TEST(WeightJacobian, LinearScalarModelIsTheInput) {
  const ModelSpec m{{3, 1}, Activation::Linear, Head::SquaredError, false};
  const WeightVector w(Vector::Constant(3, 0.7), m.layout());
  const Matrix j = weight_jacobian(m, w, input({1.0, -2.0, 0.5}), output_layer(m));
  ASSERT_EQ(j.rows(), 1);
  EXPECT_EQ(j, (Matrix(1, 3) << 1.0, -2.0, 0.5).finished());
  EXPECT_THROW(weight_jacobian(m, w, input({1.0, -2.0, 0.5}), LayerId{2}), ArgumentError);
  EXPECT_THROW(weight_jacobian(m, w, input({1.0, -2.0, 0.5}), LayerId{0}), ArgumentError);
}

TEST(Jacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  int checked = 0;
  for (Activation act : {Activation::Tanh, Activation::Relu}) {
    for (int rep = 0; rep < 10; ++rep) {
      const ModelSpec m{{3, 4, 5, 2}, act, Head::SoftmaxXent};
      const auto w = random_weights(m, rng);
      std::vector<double> x{normal(rng), normal(rng), normal(rng)};
      RowMatrix xr(1, 3);
      xr << x[0], x[1], x[2];
      if (act == Activation::Relu && testing::min_abs_preactivation(m, w.values(), xr) < 1e-3) continue;
      for (std::size_t layer = 1; layer <= m.layers(); ++layer) {
        const Matrix jw = weight_jacobian(m, w, Tensor::from(xr), LayerId{layer});
        const Matrix jw_fd = fd_jacobian([&](const Vector& v) { return as_vector(naive_outputs(m, v, x, layer)); }, w.values());
        EXPECT_LT(max_rel_err(jw, jw_fd), 1e-5);
        const Matrix jx = input_jacobian(m, w, Tensor::from(xr), LayerId{layer});
        const Matrix jx_fd = fd_jacobian(
            [&](const Vector& v) { return as_vector(naive_outputs(m, w.values(), {v[0], v[1], v[2]}, layer)); },
            as_vector(x));
        EXPECT_LT(max_rel_err(jx, jx_fd), 1e-5);
      }
      ++checked;
    }
  }
  EXPECT_GE(checked, 15);
}

TEST(Jacobians, DeadReluUnitsHaveZeroRows) {
  const ModelSpec m{{2, 3, 2}, Activation::Relu, Head::SoftmaxXent};
  std::mt19937_64 rng(2);
  Vector v = random_weights(m, rng).values();
  // First-layer biases follow the 3 x 2 weight block; kill unit 1.
  v[6 + 1] = -100.0;
  const WeightVector w(v, m.layout());
  const Tensor x = input({0.3, -0.4});
  const Matrix jw = weight_jacobian(m, w, x, LayerId{1});
  EXPECT_EQ(jw.row(1).norm(), 0.0);
  EXPECT_EQ(input_jacobian(m, w, x, LayerId{1}).row(1).norm(), 0.0);
  // Output weights reading the dead unit receive no gradient.
  const Matrix jo = weight_jacobian(m, w, x, output_layer(m));
  for (Eigen::Index r = 0; r < 2; ++r) EXPECT_EQ(jo(r, 9 + r * 3 + 1), 0.0);
}

TEST(InputJacobian, LinearModelAndComposition) {
  const ModelSpec one{{3, 2}, Activation::Linear, Head::SoftmaxXent};
  std::mt19937_64 rng(3);
  const auto w1 = random_weights(one, rng);
  const Matrix w1m = Eigen::Map<const RowMatrix>(w1.values().data(), 2, 3);
  EXPECT_LT((input_jacobian(one, w1, input({0.1, 0.2, 0.3}), output_layer(one)) - w1m).norm(), 1e-14);

  const ModelSpec two{{3, 4, 2}, Activation::Linear, Head::SoftmaxXent, false};
  const auto w2 = random_weights(two, rng);
  const Matrix a = Eigen::Map<const RowMatrix>(w2.values().data(), 4, 3);
  const Matrix b = Eigen::Map<const RowMatrix>(w2.values().data() + 12, 2, 4);
  EXPECT_LT((input_jacobian(two, w2, input({-1.0, 0.0, 2.0}), output_layer(two)) - b * a).norm(), 1e-13);
}

// --- Perturbed activations -----------------------------------------------

struct SmallNet {
  ModelSpec m{{2, 3, 2}, Activation::Tanh, Head::SoftmaxXent};
  WeightVector w;
  FisherEstimate f;
  SmallNet() {
    w = init_weights(m, Seed{1});
    const auto d = make_dataset_2d_binary(100, Seed{2});
    Matrix full = fisher_exact(m, w, Tensor::from(d.inputs)).matrix();
    full.diagonal().array() += 1e-3;  // keep the inverse well conditioned
    f = fisher_of(full);
  }
};

TEST(PerturbedActivations, ZeroBetaReproducesTheOutput) {
  const SmallNet n;
  const Tensor x = input({0.5, -0.2});
  const auto r = perturbed_activations(n.m, n.w, n.f, 1e-24, x, 5, Seed{3});
  const Vector clean = as_vector(naive_outputs(n.m, n.w.values(), {0.5, -0.2}));
  for (const auto& s : r.samples) EXPECT_LT((to_std(s) - clean).norm(), 1e-9);
}

TEST(PerturbedActivations, DeterministicPerSeed) {
  const SmallNet n;
  const Tensor x = input({0.5, -0.2});
  const auto a = perturbed_activations(n.m, n.w, n.f, 0.1, x, 4, Seed{3});
  const auto b = perturbed_activations(n.m, n.w, n.f, 0.1, x, 4, Seed{3});
  const auto c = perturbed_activations(n.m, n.w, n.f, 0.1, x, 4, Seed{4});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(to_std(a.samples[i]), to_std(b.samples[i]));
    EXPECT_NE(to_std(a.samples[i]), to_std(c.samples[i]));
  }
}

TEST(PerturbedActivations, CovarianceMatchesLinearization) {
  const SmallNet n;
  const Tensor x = input({0.5, -0.2});
  const double beta = 1e-4;
  const auto r = perturbed_activations(n.m, n.w, n.f, beta, x, 10000, Seed{5});
  EXPECT_EQ(r.damping, 0.0);
  Vector mean = Vector::Zero(2);
  for (const auto& s : r.samples) mean += to_std(s);
  mean /= static_cast<double>(r.samples.size());
  Matrix cov = Matrix::Zero(2, 2);
  for (const auto& s : r.samples) {
    const Vector d = to_std(s) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(r.samples.size() - 1);
  const Matrix j = weight_jacobian(n.m, n.w, x, output_layer(n.m));
  const Matrix want = j * (beta * n.f.matrix().inverse()) * j.transpose();
  EXPECT_LT((cov - want).norm() / want.norm(), 0.10);
}

TEST(PerturbedActivations, HiddenLayerSamples) {
  const SmallNet n;
  const auto r = perturbed_activations(n.m, n.w, n.f, 0.1, input({0.5, -0.2}), 3, Seed{5}, LayerId{1});
  for (const auto& s : r.samples) {
    EXPECT_EQ(s.size(), 3u);
    EXPECT_LE(to_std(s).cwiseAbs().maxCoeff(), 1.0);  // tanh range
  }
}

// --- Conditional Fisher --------------------------------------------------

TEST(ConditionalFisherTest, ScalarLinearHandFormula) {
  const double wv = 1.7, x = 0.6, fw = 3.0, beta = 0.2;
  const WeightVector w(Vector::Constant(1, wv), kScalar.layout());
  const auto cf = fisher_z_given_x(kScalar, w, fisher_of(Matrix::Constant(1, 1, fw)), beta, input({x}), output_layer(kScalar));
  const double want = wv * wv * fw / (beta * x * x);
  EXPECT_NEAR(cf.value(0, 0), want, 1e-9 * want);

  // Curvature of the expected log-density of N(w x', s) under z ~ N(w x, s),
  // s = x^2 beta / F_w held at x, by second differences in x'.
  const double s = x * x * beta / fw;
  auto expected_loglik = [&](double xp) { return -0.5 * ((s + std::pow(wv * x - wv * xp, 2)) / s + std::log(s)); };
  const double h = 1e-4;
  const double curv = -(expected_loglik(x + h) - 2.0 * expected_loglik(x) + expected_loglik(x - h)) / (h * h);
  EXPECT_NEAR(cf.value(0, 0), curv, 1e-5 * want);
}

TEST(ConditionalFisherTest, BetaScalingIsInverse) {
  const SmallNet n;
  const Tensor x = input({0.1, 0.9});
  const Matrix a = fisher_z_given_x(n.m, n.w, n.f, 0.3, x, LayerId{1}).value;
  const Matrix b = fisher_z_given_x(n.m, n.w, n.f, 0.3 * 7.0, x, LayerId{1}).value;
  EXPECT_LT((b - a / 7.0).norm(), 1e-10 * a.norm());
}

TEST(ConditionalFisherTest, VanishesWithTheWeightFisher) {
  const SmallNet n;
  const Tensor x = input({0.1, 0.9});
  double prev = INFINITY;
  for (double s : {1.0, 1e-2, 1e-4, 1e-6}) {
    const Matrix f = s * Matrix::Identity(static_cast<Eigen::Index>(n.w.k()), static_cast<Eigen::Index>(n.w.k()));
    const double t = fisher_z_given_x(n.m, n.w, fisher_of(f), 0.5, x, output_layer(n.m)).value.trace();
    EXPECT_LT(t, prev);
    prev = t;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(ConditionalFisherTest, SymmetricPsdOnProbes) {
  const SmallNet n;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix f = fisher_z_given_x(n.m, n.w, n.f, 0.1, input({normal(rng), normal(rng)}), LayerId{1}).value;
    EXPECT_LT((f - f.transpose()).norm(), 1e-12 * std::max(1.0, f.norm()));
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(f).eigenvalues().minCoeff(), -1e-10 * std::max(1.0, f.norm()));
  }
}

TEST(ConditionalFisherTest, LipschitzScalingOfTheInputWeights) {
  // z = W x + b: J_f does not depend on W, so W -> c W scales F by c^2.
  const ModelSpec m{{2, 3}, Activation::Linear, Head::SoftmaxXent};
  std::mt19937_64 rng(7);
  const auto w = random_weights(m, rng);
  Vector scaled = w.values();
  const double c = 2.5;
  scaled.head(6) *= c;
  const auto f = fisher_of(Matrix::Identity(9, 9));
  const Tensor x = input({0.4, -1.2});
  const Matrix a = fisher_z_given_x(m, w, f, 0.1, x, output_layer(m)).value;
  const Matrix b = fisher_z_given_x(m, WeightVector(scaled, m.layout()), f, 0.1, x, output_layer(m)).value;
  const double shift = std::log(b.determinant()) - std::log(a.determinant());
  EXPECT_NEAR(shift, 2.0 * 2.0 * std::log(c), 1e-9);
}

// --- Effective MI --------------------------------------------------------

TEST(EffectiveMi, ScalarLinearHandFormula) {
  const double wv = 1.7, x = 0.6, fw = 3.0, beta = 0.2;
  const WeightVector w(Vector::Constant(1, wv), kScalar.layout());
  const auto r = effective_mi(kScalar, w, fisher_of(Matrix::Constant(1, 1, fw)), beta, {input({x})}, output_layer(kScalar), 2.0);
  const double f = wv * wv * fw / (beta * x * x);
  const double want = -0.5 * (std::log(2.0 * std::numbers::pi * std::numbers::e) - std::log(f));
  EXPECT_NEAR(r.delta_i, want, 1e-12);
  ASSERT_TRUE(r.i_eff.has_value());
  EXPECT_NEAR(*r.i_eff, 2.0 + want, 1e-12);
  EXPECT_FALSE(r.clamped);
  EXPECT_FALSE(r.damped);

  const auto low = effective_mi(kScalar, w, fisher_of(Matrix::Constant(1, 1, fw)), beta, {input({x})}, output_layer(kScalar), -50.0);
  EXPECT_TRUE(low.clamped);
  EXPECT_EQ(*low.i_eff, 0.0);
  EXPECT_FALSE(effective_mi(kScalar, w, fisher_of(Matrix::Constant(1, 1, fw)), beta, {input({x})}, output_layer(kScalar)).i_eff);
}

TEST(EffectiveMi, IdenticalProbesGiveIdenticalLogdets) {
  const SmallNet n;
  const Tensor x = input({0.2, 0.2});
  const auto r = effective_mi(n.m, n.w, n.f, 0.1, {x, x, x}, LayerId{1});
  ASSERT_EQ(r.logdets.size(), 3u);
  EXPECT_EQ(r.logdets[0], r.logdets[1]);
  EXPECT_EQ(r.logdets[1], r.logdets[2]);
  EXPECT_EQ(r.layer, 1u);
  EXPECT_THROW(effective_mi(n.m, n.w, n.f, 0.1, {}, LayerId{1}), ArgumentError);
}

TEST(EffectiveMi, StrictlyDecreasingInBeta) {
  const SmallNet n;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  std::vector<Tensor> probes;
  for (int i = 0; i < 16; ++i) probes.push_back(input({normal(rng), normal(rng)}));
  for (std::size_t layer : {1u, 2u}) {
    double prev = INFINITY;
    for (double beta : {0.01, 0.1, 1.0, 10.0}) {
      const double d = effective_mi(n.m, n.w, n.f, beta, probes, LayerId{layer}).delta_i;
      EXPECT_LT(d, prev) << "layer " << layer << " beta " << beta;
      prev = d;
    }
  }
}

}  // namespace
}  // namespace nninfo
