#include "nninfo/datasets.hpp"
#include "nninfo/dynamics.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

namespace nninfo {
namespace {

bool same(const LabeledDataset& a, const LabeledDataset& b) {
  return a.inputs.rows() == b.inputs.rows() && a.inputs.cols() == b.inputs.cols() && a.inputs == b.inputs &&
         a.labels == b.labels && a.targets.size() == b.targets.size() && a.targets == b.targets;
}

double train_accuracy(const ModelSpec& m, const LabeledDataset& d, double eta, long steps, Seed init) {
  TrainConfig cfg;
  cfg.eta = eta;
  cfg.batch = d.size();
  cfg.steps = steps;
  cfg.snapshot_stride = steps;
  const auto trace = sgd_train(m, d, cfg, init_weights(m, init));
  return accuracy(m, trace.final, d);
}

TEST(ModelSpec, LayoutAndValidation) {
  const ModelSpec m{{2, 3, 4}, Activation::Tanh, Head::SoftmaxXent};
  EXPECT_EQ(m.num_params(), 2u * 3 + 3 + 3 * 4 + 4);
  EXPECT_EQ(m.layout().size(), 4u);
  EXPECT_THROW((ModelSpec{{2}, Activation::Tanh, Head::SoftmaxXent}.validate()), ArgumentError);
  EXPECT_THROW((ModelSpec{{2, 0, 2}, Activation::Tanh, Head::SoftmaxXent}.validate()), ArgumentError);
  EXPECT_THROW((ModelSpec{{2, 1}, Activation::Tanh, Head::SoftmaxXent}.validate()), ArgumentError);
  EXPECT_EQ(parse_activation("relu"), Activation::Relu);
  EXPECT_THROW(parse_head("hinge"), ArgumentError);
}

TEST(ModelSpec, InitializerHasZeroBiasesAndHeScale) {
  const ModelSpec m{{400, 300, 2}, Activation::Relu, Head::SoftmaxXent};
  const auto w = init_weights(m, Seed{1});
  const Vector& v = w.values();
  const auto off = static_cast<Eigen::Index>(m.weight_offset(1));
  const auto n = static_cast<Eigen::Index>(400 * 300);
  const Vector w1 = v.segment(off, n);
  const double var = w1.squaredNorm() / static_cast<double>(n);
  EXPECT_NEAR(var, 2.0 / 400.0, 0.02 * 2.0 / 400.0);
  EXPECT_EQ(v.segment(static_cast<Eigen::Index>(m.bias_offset(1)), 300).norm(), 0.0);
  EXPECT_TRUE(init_weights(m, Seed{1}).values() == v);
}

TEST(TwoMoons, DeterministicPerSeed) {
  EXPECT_TRUE(same(make_dataset_2d_binary(300, Seed{4}), make_dataset_2d_binary(300, Seed{4})));
  EXPECT_FALSE(same(make_dataset_2d_binary(300, Seed{4}), make_dataset_2d_binary(300, Seed{5})));
  EXPECT_THROW(make_dataset_2d_binary(1, Seed{0}), ArgumentError);
}

TEST(TwoMoons, LabelsAreBalanced) {
  const auto d = make_dataset_2d_binary(1000, Seed{7});
  const double ones = std::count(d.labels.begin(), d.labels.end(), 1) / 1000.0;
  EXPECT_GE(ones, 0.45);
  EXPECT_LE(ones, 0.55);
}

TEST(TwoMoons, NeedsANonlinearBoundary) {
  const auto d = make_dataset_2d_binary(1000, Seed{3});
  const ModelSpec linear{{2, 2}, Activation::Linear, Head::SoftmaxXent};
  const ModelSpec mlp{{2, 16, 16, 2}, Activation::Tanh, Head::SoftmaxXent};
  EXPECT_LT(train_accuracy(linear, d, 0.5, 3000, Seed{1}), 0.90);
  EXPECT_GT(train_accuracy(mlp, d, 1.0, 4000, Seed{1}), 0.97);
}

TEST(Blobs, PrefixProperty) {
  const auto ten = make_dataset_kclass(1000, 10, 10, Seed{2});
  const auto two = make_dataset_kclass(200, 2, 10, Seed{2});
  EXPECT_TRUE(same(restrict_classes(ten, 2), two));
  EXPECT_THROW(make_dataset_kclass(100, 1, 10, Seed{0}), ArgumentError);
  EXPECT_THROW(make_dataset_kclass(100, 4, 1, Seed{0}), ArgumentError);
}

TEST(Blobs, CentersAreWellSeparated) {
  const RowMatrix c = blob_centers(10, 10, Seed{5});
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = i + 1; j < c.rows(); ++j) EXPECT_GT((c.row(i) - c.row(j)).norm(), 4.0 * kBlobStd);
}

TEST(Blobs, WithinClassSpreadMatchesStd) {
  const auto d = make_dataset_kclass(5000, 5, 10, Seed{8});
  const RowMatrix c = blob_centers(5, 10, Seed{8});
  double ss = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    ss += (d.inputs.row(static_cast<Eigen::Index>(i)) - c.row(d.labels[i])).squaredNorm();
  EXPECT_NEAR(std::sqrt(ss / (5000.0 * 10.0)), kBlobStd, 0.01);
}

TEST(Blobs, MlpFitsTenClasses) {
  const auto d = make_dataset_kclass(2000, 10, 10, Seed{1});
  const ModelSpec mlp{{10, 32, 32, 10}, Activation::Tanh, Head::SoftmaxXent};
  EXPECT_GT(train_accuracy(mlp, d, 0.5, 500, Seed{2}), 0.95);
}

TEST(ToyDataset, DefaultsAndDeterminism) {
  const ToyModelConfig cfg;
  EXPECT_EQ(cfg.n, 100u);
  EXPECT_EQ(cfg.mu_lo, -1.0);
  EXPECT_EQ(cfg.mu_hi, 1.0);
  EXPECT_EQ(cfg.noise_sd, 1.0);
  const auto a = make_toy_dataset(cfg, Seed{9});
  const auto b = make_toy_dataset(cfg, Seed{9});
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_TRUE(same(a.data, b.data));
  EXPECT_EQ(a.data.size(), 100u);
}

TEST(ToyDataset, SampleMeanTracksMu) {
  const ToyModelConfig cfg;
  int inside = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto t = make_toy_dataset(cfg, Seed{s});
    EXPECT_GE(t.mu, -1.0);
    EXPECT_LE(t.mu, 1.0);
    if (std::abs(t.data.targets.mean() - t.mu) <= 3.0 / std::sqrt(100.0)) ++inside;
  }
  EXPECT_GE(inside, 990);
}

TEST(Phi, OddBoundedAndZeroAtOrigin) {
  EXPECT_EQ(toy_phi(0.0, 6.0).value, 0.0);
  for (double t = -40.0; t <= 40.0; t += 0.37) {
    const auto p = toy_phi(t, 6.0);
    EXPECT_LE(std::abs(p.value), 1.0);
    EXPECT_NEAR(toy_phi(-t, 6.0).value, -p.value, 1e-15);
  }
}

TEST(Phi, DerivativeMatchesFiniteDifferences) {
  for (double t = -30.0; t <= 30.0; t += 0.61) {
    const double h = 1e-5 * std::max(1.0, std::abs(t));
    const double fd = (toy_phi(t + h, 6.0).value - toy_phi(t - h, 6.0).value) / (2.0 * h);
    EXPECT_LT(testing::rel_err(toy_phi(t, 6.0).derivative, fd), 1e-6) << "theta " << t;
    const double fd2 = (toy_phi(t + h, 6.0).derivative - toy_phi(t - h, 6.0).derivative) / (2.0 * h);
    EXPECT_LT(testing::rel_err(toy_phi_second(t, 6.0), fd2), 1e-6) << "theta " << t;
  }
}

TEST(Phi, OuterRootsAreFlatter) {
  // Bracket sign changes of phi - m on a fine grid, then bisect.
  const double m = 0.5, c = 6.0;
  std::vector<double> roots;
  const double step = 1e-3;
  for (double t = -50.0; t < 50.0; t += step) {
    double a = t, b = t + step;
    if ((toy_phi(a, c).value - m) * (toy_phi(b, c).value - m) > 0.0) continue;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (a + b);
      ((toy_phi(a, c).value - m) * (toy_phi(mid, c).value - m) <= 0.0 ? b : a) = mid;
    }
    roots.push_back(0.5 * (a + b));
  }
  ASSERT_GE(roots.size(), 5u);
  std::sort(roots.begin(), roots.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  for (std::size_t i = 0; i + 1 < roots.size(); ++i) {
    if (std::abs(roots[i + 1]) - std::abs(roots[i]) < 1e-9) continue;  // mirror pair
    EXPECT_GT(std::abs(toy_phi(roots[i], c).derivative), std::abs(toy_phi(roots[i + 1], c).derivative));
  }
}

TEST(ToyLoss, ZeroAtExactFitAndPermutationInvariant) {
  const double theta = 0.3;
  const double phi = toy_phi(theta, 6.0).value;
  EXPECT_EQ(toy_loss(theta, toy_dataset_from(phi, Vector::Zero(10)), 6.0), 0.0);
  const auto d = make_toy_dataset(ToyModelConfig{}, Seed{2}).data;
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[50]);
  EXPECT_NEAR(toy_loss(1.7, d, 6.0), toy_loss(1.7, d.subset(perm), 6.0), 1e-14);
}

TEST(ToyLoss, MinimumIsTheSampleVariance) {
  const auto d = make_toy_dataset(ToyModelConfig{}, Seed{12}).data;
  const double mean = d.targets.mean();
  ASSERT_LT(std::abs(mean), 1.0);
  const double var = (d.targets.array() - mean).square().mean();
  // Scan, then refine by golden section inside the best bracket.
  double best = 0.0, best_l = INFINITY;
  for (double t = -5.0; t <= 5.0; t += 1e-3) {
    const double l = toy_loss(t, d, 6.0);
    if (l < best_l) best_l = l, best = t;
  }
  double a = best - 1e-3, b = best + 1e-3;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double c1 = b - g * (b - a), c2 = a + g * (b - a);
    if (toy_loss(c1, d, 6.0) < toy_loss(c2, d, 6.0)) b = c2;
    else a = c1;
  }
  EXPECT_NEAR(toy_loss(0.5 * (a + b), d, 6.0), var, 1e-12);
}

TEST(ToyFisher, MatchesTheDefinitionalFisher) {
  // Per observation x ~ N(phi(theta), 1/2): F = E[(d/dtheta log p(x|theta))^2],
  // integrated by the trapezoid rule with the score from finite differences.
  const double c = 6.0, s2 = 0.5;
  for (double theta : {0.0, 0.4, 2.5, 11.0}) {
    const double mu = toy_phi(theta, c).value;
    auto logp = [&](double x, double t) {
      const double m = toy_phi(t, c).value;
      return -0.5 * std::log(2.0 * std::numbers::pi * s2) - (x - m) * (x - m) / (2.0 * s2);
    };
    const double h = 1e-5 * std::max(1.0, std::abs(theta));
    const double dx = 1e-3;
    double acc = 0.0;
    for (double x = mu - 10.0; x <= mu + 10.0; x += dx) {
      const double score = (logp(x, theta + h) - logp(x, theta - h)) / (2.0 * h);
      acc += std::exp(logp(x, theta)) * score * score * dx;
    }
    EXPECT_LT(testing::rel_err(toy_fisher(theta, 100, c), 100.0 * acc), 1e-6) << "theta " << theta;
  }
}

TEST(DatasetCsv, RoundTripIsBitExact) {
  for (bool regression : {false, true}) {
    const LabeledDataset d = regression ? make_toy_dataset(ToyModelConfig{}, Seed{3}).data
                                        : make_dataset_kclass(50, 3, 4, Seed{3});
    std::stringstream ss;
    write_dataset_csv(ss, d);
    const auto header = ss.str().substr(0, ss.str().find('\n'));
    EXPECT_EQ(header, regression ? "x0,label" : "x0,x1,x2,x3,label");
    const auto back = read_dataset_csv(ss, regression);
    EXPECT_TRUE(same(d, back));
  }
}

}  // namespace
}  // namespace nninfo
