#include "nninfo/ndcore.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

namespace nninfo {
namespace {

using testing::fd_gradient;
using testing::max_rel_err;

LabeledDataset tiny_dataset() {
  LabeledDataset d;
  d.inputs.resize(4, 2);
  d.inputs << 1.0, 0.5, -0.3, 2.0, 0.7, -1.1, 0.0, 0.4;
  d.labels = {0, 1, 1, 0};
  return d;
}

TEST(Forward, ZeroWeightClassifierIsUniform) {
  const ModelSpec m{{3, 4, 2}, Activation::Tanh, Head::SoftmaxXent};
  const auto w = zero_weights(m);
  const Tensor x({0.3, -7.0, 12.0, 1.0, 2.0, 3.0}, {2, 3});
  const Tensor p = forward(m, w, x);
  ASSERT_EQ(p.shape(), (std::vector<std::size_t>{2, 2}));
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, IdentityLinearRegressor) {
  const ModelSpec m{{1, 1}, Activation::Linear, Head::SquaredError};
  const WeightVector w(Vector::Constant(2, 0.0), m.layout());
  Vector v = w.values();
  v[0] = 1.0;  // W1 = [1], b1 = 0
  const Tensor y = forward(m, w.with_values(v), Tensor::vector({1.0}));
  EXPECT_EQ(y.data().at(0), 1.0);
}

TEST(Forward, MatchesLoopOracle) {
  std::mt19937_64 rng(11);
  for (auto act : {Activation::Tanh, Activation::Relu}) {
    const ModelSpec m{{4, 6, 5, 3}, act, Head::SoftmaxXent};
    const auto w = testing::random_weights(m, rng);
    const auto d = testing::random_dataset(m, 7, rng);
    const RowMatrix p = forward(m, w, Tensor::from(d.inputs)).as_rows();
    for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) {
      const auto want = testing::naive_probabilities(m, testing::naive_outputs(m, w.values(), testing::row_of(d.inputs, r)));
      double sum = 0.0;
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        EXPECT_NEAR(p(r, c), want[static_cast<std::size_t>(c)], 1e-12);
        sum += p(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Forward, RejectsWrongInputWidth) {
  const ModelSpec m{{3, 2}, Activation::Tanh, Head::SoftmaxXent};
  EXPECT_THROW(forward(m, zero_weights(m), Tensor::vector({1.0, 2.0})), ShapeError);
}

TEST(Loss, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  for (auto head : {Head::SoftmaxXent, Head::SigmoidXent, Head::SquaredError}) {
    const ModelSpec m{{3, 4, head == Head::SoftmaxXent ? 3u : 1u}, Activation::Tanh, head};
    const auto w = testing::random_weights(m, rng);
    const auto d = testing::random_dataset(m, 9, rng);
    EXPECT_NEAR(loss(m, w, d), testing::naive_loss(m, w.values(), d), 1e-12) << to_string(head);
  }
}

TEST(GradLoss, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (auto act : {Activation::Tanh, Activation::Relu, Activation::Linear}) {
    for (auto head : {Head::SoftmaxXent, Head::SigmoidXent, Head::SquaredError}) {
      for (int rep = 0; rep < 8; ++rep) {
        const auto m = testing::random_model(rng, act, head);
        const auto w = testing::random_weights(m, rng);
        const auto d = testing::random_dataset(m, 6, rng);
        if (act == Activation::Relu && testing::min_abs_preactivation(m, w.values(), d.inputs) < 1e-3) continue;
        const Vector g = grad_loss(m, w, d).values();
        const Vector fd = fd_gradient([&](const Vector& v) { return testing::naive_loss(m, v, d); }, w.values());
        EXPECT_LT(max_rel_err(g, fd), 1e-5) << to_string(act) << " " << to_string(head);
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, 60);
}

TEST(GradLoss, DuplicatedDatasetGivesSameGradient) {
  const ModelSpec m{{2, 5, 2}, Activation::Tanh, Head::SoftmaxXent};
  const auto w = init_weights(m, Seed{3});
  const auto d = tiny_dataset();
  const auto twice = d.subset({0, 1, 2, 3, 0, 1, 2, 3});
  const Vector a = grad_loss(m, w, d).values();
  const Vector b = grad_loss(m, w, twice).values();
  EXPECT_LT(max_rel_err(a, b), 1e-12);  // equal up to summation order
}

TEST(GradLoss, VanishesAtInterpolatingMinimum) {
  // Targets generated by the model itself: the squared error is exactly 0.
  const ModelSpec m{{3, 1}, Activation::Linear, Head::SquaredError};
  std::mt19937_64 rng(2);
  const auto w = testing::random_weights(m, rng);
  auto d = testing::random_dataset(m, 20, rng);
  d.targets = raw_outputs(m, w, d.inputs).col(0);
  EXPECT_LT(grad_loss(m, w, d).values().norm(), 1e-6);
}

TEST(GradLoss, EmptyDatasetIsAnArgumentError) {
  const ModelSpec m{{2, 2}, Activation::Tanh, Head::SoftmaxXent};
  LabeledDataset d;
  d.inputs.resize(0, 2);
  EXPECT_THROW(grad_loss(m, zero_weights(m), d), ArgumentError);
}

TEST(PerSampleGrad, LogisticClosedForm) {
  const ModelSpec m{{2, 1}, Activation::Linear, Head::SigmoidXent, false};
  const auto g = per_sample_loglik_grad(m, zero_weights(m), Tensor::vector({1.0, 0.0}), 1);
  // (1 - sigmoid(0)) x
  EXPECT_DOUBLE_EQ(g.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(g.values()[1], 0.0);
}

TEST(PerSampleGrad, ScoreHasZeroMeanUnderTheModel) {
  std::mt19937_64 rng(8);
  for (auto head : {Head::SoftmaxXent, Head::SigmoidXent}) {
    for (int rep = 0; rep < 10; ++rep) {
      const auto m = testing::random_model(rng, Activation::Tanh, head);
      const auto w = testing::random_weights(m, rng);
      const auto d = testing::random_dataset(m, 1, rng);
      const Tensor x = Tensor::from(d.inputs);
      const RowMatrix p = forward(m, w, x).as_rows();
      Vector mean = Vector::Zero(static_cast<Eigen::Index>(w.k()));
      for (int y = 0; y < static_cast<int>(m.num_classes()); ++y) mean += p(0, y) * per_sample_loglik_grad(m, w, x, y).values();
      EXPECT_LT(mean.lpNorm<Eigen::Infinity>(), 1e-10);
    }
  }
}

TEST(PerSampleGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = testing::random_model(rng, Activation::Tanh, Head::SoftmaxXent);
    const auto w = testing::random_weights(m, rng);
    const auto d = testing::random_dataset(m, 1, rng);
    const int y = d.labels[0];
    const auto x = testing::row_of(d.inputs, 0);
    const Vector g = per_sample_loglik_grad(m, w, Tensor::from(d.inputs), y).values();
    const Vector fd = fd_gradient(
        [&](const Vector& v) {
          return std::log(testing::naive_probabilities(m, testing::naive_outputs(m, v, x))[static_cast<std::size_t>(y)]);
        },
        w.values());
    EXPECT_LT(max_rel_err(g, fd), 1e-5);
  }
}

TEST(PerSampleGrad, InvalidLabelIsAnArgumentError) {
  const ModelSpec m{{2, 3}, Activation::Tanh, Head::SoftmaxXent};
  EXPECT_THROW(per_sample_loglik_grad(m, zero_weights(m), Tensor::vector({1.0, 0.0}), 3), ArgumentError);
  EXPECT_THROW(per_sample_loglik_grad(m, zero_weights(m), Tensor::vector({1.0, 0.0}), -1), ArgumentError);
}

TEST(HessianFd, QuadraticReturnsItsMatrix) {
  // L = 1/2 w^T A w through the generic entry point.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  Matrix b(5, 5);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
  const Matrix a = b * b.transpose() + Matrix::Identity(5, 5);
  Vector w(5);
  for (Eigen::Index i = 0; i < 5; ++i) w[i] = normal(rng);
  const Matrix h = hessian_fd_generic([&](const Vector& v) { return Vector(a * v); }, w);
  EXPECT_LT((h - a).norm() / a.norm(), 1e-6);
}

TEST(HessianFd, LinearRegressorMatchesNormalEquations) {
  // Mean squared error of a linear model: H = (2/N) X~^T X~ with X~ = [X, 1].
  const ModelSpec m{{3, 1}, Activation::Linear, Head::SquaredError};
  std::mt19937_64 rng(6);
  const auto w = testing::random_weights(m, rng);
  const auto d = testing::random_dataset(m, 30, rng);
  Matrix xt(30, 4);
  xt << d.inputs, Vector::Ones(30);
  const Matrix want = 2.0 / 30.0 * xt.transpose() * xt;
  EXPECT_LT((hessian_fd(m, w, d) - want).norm() / want.norm(), 1e-6);
}

TEST(HessianFd, ConstantLossGivesZero) {
  const ModelSpec m{{2, 1}, Activation::Linear, Head::SquaredError, false};
  LabeledDataset d;
  d.inputs = RowMatrix::Zero(5, 2);
  d.targets = Vector::LinSpaced(5, -1.0, 1.0);
  std::mt19937_64 rng(1);
  EXPECT_EQ(hessian_fd(m, testing::random_weights(m, rng), d).norm(), 0.0);
}

TEST(HessianFd, UnsymmetrizedResidualIsSmall) {
  const ModelSpec m{{2, 4, 3}, Activation::Tanh, Head::SoftmaxXent};
  const auto w = init_weights(m, Seed{9});
  const auto d = tiny_dataset();
  const Matrix raw =
      hessian_fd_raw([&](const Vector& v) { return loss_and_grad(m, w.with_values(v), d).second; }, w.values());
  EXPECT_LT((raw - raw.transpose()).norm(), 1e-6 * raw.norm());
  const Matrix h = hessian_fd(m, w, d);
  EXPECT_EQ((h - h.transpose()).norm(), 0.0);
}

TEST(HessianFd, CapacityErrorAboveDenseCap) {
  const ModelSpec m{{2, 50, 50, 2}, Activation::Tanh, Head::SoftmaxXent};
  ASSERT_GT(m.num_params(), kDenseCap);
  auto d = tiny_dataset();
  try {
    hessian_fd(m, zero_weights(m), d);
    FAIL() << "expected a capacity error";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("trace"), std::string::npos);
  }
}

}  // namespace
}  // namespace nninfo
