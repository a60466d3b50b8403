#include "l1box/models.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace l1box;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double rel_error(const Vector& a, const Vector& b) {
  const double scale = std::max(b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

}  // namespace

TEST(CrossEntropy, ReferenceValues) {
  EXPECT_NEAR(cross_entropy(Vector::Constant(7, 0.3), 2), std::log(7.0), 1e-14);
  EXPECT_NEAR(cross_entropy(vec({10.0, -10.0}), 0), std::log1p(std::exp(-20.0)), 1e-18);
  EXPECT_NEAR(cross_entropy(vec({1.0, 2.0, 3.0}), 2), 0.40760596444438, 1e-12);
  EXPECT_THROW(cross_entropy(vec({1.0, 2.0}), 2), ParameterError);
}

TEST(DlrTargeted, ReferenceValues) {
  EXPECT_NEAR(dlr_targeted(vec({4.0, 3.0, 2.0, 1.0}), 0, 1), -0.4, 1e-15);
  EXPECT_EQ(dlr_targeted(vec({2.0, 5.0, 2.0, 1.0}), 0, 2), 0.0);
  EXPECT_NEAR(dlr_targeted(vec({4.0, 3.0, 1.0, 2.0, 0.5}), 0, 1),
              dlr_targeted(vec({4.0, 3.0, 0.5, 1.0, 2.0}), 0, 1), 1e-15);
  EXPECT_THROW(dlr_targeted(vec({1.0, 2.0, 3.0}), 0, 1), UnsupportedError);
  EXPECT_THROW(dlr_targeted(vec({1.0, 2.0, 3.0, 4.0}), 1, 1), ParameterError);
}

TEST(MarginLoss, SignMeansMisclassified) {
  EXPECT_EQ(margin_loss(vec({2.0, 1.0, 0.0}), 0), 1.0);
  EXPECT_EQ(margin_loss(vec({0.0, 2.0, 1.0}), 0), -2.0);
  EXPECT_EQ(margin_loss(vec({5.0, 5.0}), 0), 0.0);
  EXPECT_FALSE(is_correct(vec({5.0, 5.0}), 0));
  EXPECT_TRUE(is_correct(vec({5.0, 4.0}), 0));
}

TEST(LossAndGrad, LinearCrossEntropyClosedForm) {
  Rng rng(1);
  const auto model = LinearSoftmaxModel::random(6, 4, 1.0, rng);
  const Vector x = fixtures::uniform_vector(6, 0.0, 1.0, rng);
  const LossGrad lg = loss_and_grad(model, x, 2, LossKind::CrossEntropy);
  const Vector z = model.logits(x);
  Vector p = (z.array() - z.maxCoeff()).exp();
  p /= p.sum();
  p[2] -= 1.0;
  EXPECT_LE((lg.grad - model.weights().transpose() * p).norm(), 1e-12);
  EXPECT_NEAR(lg.value, cross_entropy(z, 2), 1e-15);
}

TEST(LossAndGrad, ConstantModelHasZeroGradient) {
  const ConstantModel model(vec({1.0, 2.0, 0.5, 0.1}), 5);
  const LossGrad lg = loss_and_grad(model, Vector::Constant(5, 0.5), 0, LossKind::CrossEntropy);
  EXPECT_EQ(lg.grad, Vector::Zero(5));
  EXPECT_THROW(loss_and_grad(model, Vector::Constant(5, 0.5), 0, LossKind::DlrTargeted), ParameterError);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  Rng rng(3);
  const auto linear = LinearSoftmaxModel::random(8, 5, 1.0, rng);
  const MlpModel mlp({8, 12, 7, 5}, rng);
  for (const LogitsOracle* model : {static_cast<const LogitsOracle*>(&linear), static_cast<const LogitsOracle*>(&mlp)})
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::DlrTargeted, LossKind::Margin})
      for (int trial = 0; trial < 10; ++trial) {
        const Vector x = fixtures::uniform_vector(8, 0.0, 1.0, rng);
        const int y = trial % 5;
        const std::optional<int> target = kind == LossKind::DlrTargeted ? std::optional<int>((y + 1) % 5) : std::nullopt;
        const Vector analytic = loss_and_grad(*model, x, y, kind, target).grad;
        const Vector numeric = finite_diff_grad(*model, x, y, kind, 1e-5, target);
        EXPECT_LE(rel_error(analytic, numeric), 1e-5) << to_string(kind);
      }
}

TEST(Models, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(5);
  MlpModel mlp({4, 6, 3}, rng);
  const Vector x = fixtures::uniform_vector(4, 0.0, 1.0, rng);
  const Vector upstream = fixtures::normal_vector(3, rng);
  const Vector analytic = mlp.grad_parameters(x, upstream);
  const Vector p = mlp.parameters();
  Vector numeric(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector q = p;
    q[i] += 1e-6;
    mlp.set_parameters(q);
    const double hi = upstream.dot(mlp.logits(x));
    q[i] -= 2e-6;
    mlp.set_parameters(q);
    const double lo = upstream.dot(mlp.logits(x));
    numeric[i] = (hi - lo) / 2e-6;
  }
  mlp.set_parameters(p);
  EXPECT_LE(rel_error(analytic, numeric), 1e-6);
}

TEST(Models, ParameterRoundTrip) {
  Rng rng(6);
  auto linear = LinearSoftmaxModel::random(5, 3, 1.0, rng);
  const Vector p = linear.parameters();
  linear.set_parameters(p);
  EXPECT_EQ(linear.parameters(), p);
  EXPECT_THROW(MlpModel({4, 3}, rng), ParameterError);
  EXPECT_THROW(LinearSoftmaxModel(Matrix::Zero(3, 2), Vector::Zero(2)), DimensionError);
}

TEST(Blobs, DeterministicBalancedAndSeparated) {
  Rng a(10), b(10);
  const LabeledDataset d1 = make_blobs(32, 512, 2, 20.0, a);
  const LabeledDataset d2 = make_blobs(32, 512, 2, 20.0, b);
  ASSERT_EQ(d1.size(), 512u);
  for (std::size_t i = 0; i < d1.size(); ++i) {
    EXPECT_EQ(d1.inputs[i], d2.inputs[i]);
    EXPECT_EQ(d1.labels[i], d2.labels[i]);
    EXPECT_GE(d1.inputs[i].minCoeff(), 0.0);
    EXPECT_LE(d1.inputs[i].maxCoeff(), 1.0);
  }
  const auto ones = std::count(d1.labels.begin(), d1.labels.end(), 1);
  EXPECT_LE(std::abs(static_cast<long>(ones) - 256), 1);
  Rng c(1);
  EXPECT_THROW(make_blobs(4, 10, 3, 100.0, c), ParameterError);
}

TEST(TrainPlain, SeparableBlobsAreLearned) {
  Rng rng(21);
  const LabeledDataset data = make_blobs(32, 512, 2, 20.0, rng);
  auto model = LinearSoftmaxModel::random(32, 2, 0.01, rng);
  train_plain(model, data, SgdConfig{}, rng);
  EXPECT_GE(clean_accuracy(model, data), 0.99);
}

TEST(TrainPlain, ZeroLearningRateKeepsParameters) {
  Rng rng(22);
  const LabeledDataset data = make_blobs(16, 64, 3, 6.0, rng);
  MlpModel mlp({16, 8, 3}, rng);
  const Vector before = mlp.parameters();
  train_plain(mlp, data, SgdConfig{3, 0.0, 16}, rng);
  EXPECT_EQ(mlp.parameters(), before);
}

TEST(ToyCifar, ShapeAndRange) {
  Rng rng(2);
  const LabeledDataset data = make_toy_cifar(40, rng);
  ASSERT_TRUE(data.image_shape.has_value());
  EXPECT_EQ(data.dim(), 192);
  EXPECT_EQ((*data.image_shape)[2], 3);
  data.validate(10);
}
