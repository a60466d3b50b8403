#include "l1box/advtrain.hpp"
#include "l1box/ensemble.hpp"
#include "l1box/geometry.hpp"

#include <gtest/gtest.h>

using namespace l1box;

namespace {

constexpr Eigen::Index kDim = 16;
constexpr int kClasses = 3;

LabeledDataset blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return make_blobs(kDim, n, kClasses, 6.0, rng, 0.12);
}

struct Split {
  LabeledDataset train, test;
};

Split split(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  const LabeledDataset all = blobs(n_train + n_test, seed);
  return {all.subset(0, n_train), all.subset(n_train, n_train + n_test)};
}

MlpModel fresh_model(std::uint64_t seed) {
  Rng rng(seed);
  return MlpModel({kDim, 24, kClasses}, rng);
}

AtConfig small_at(double eps) {
  AtConfig cfg;
  cfg.eps_train = eps;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.seed = 5;
  return cfg;
}

double apgd_robust_accuracy(const LogitsOracle& model, const LabeledDataset& data, double eps) {
  const auto attack = [&](const Vector& x, int y, std::size_t id) {
    Rng rng(mix_seed(1, id, 0));
    const ClassifierObjective obj(model, LossKind::CrossEntropy, y);
    return apgd_multi(obj, x, eps, ApgdConfig::multi_eps(100), rng);
  };
  return evaluate_attack(model, data, attack, 2).robust_accuracy;
}

}  // namespace

TEST(AtConfig, Validation) {
  AtConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.inner_steps = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = AtConfig{};
  cfg.eps_train = -1.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  const ApgdConfig inner = AtConfig{}.inner_config();
  EXPECT_EQ(inner.n_iter, 10);
  EXPECT_EQ(inner.k0, 0.05);
  EXPECT_FALSE(inner.early_stop);
  EXPECT_TRUE(inner.phases.empty());
}

TEST(AdvTrain, ZeroRadiusMatchesPlainTraining) {
  const LabeledDataset data = blobs(60, 1);
  MlpModel at = fresh_model(2), plain = fresh_model(2);
  const AtConfig cfg = small_at(0.0);
  adv_train(at, data, cfg);
  SgdConfig sgd;
  sgd.epochs = cfg.epochs;
  sgd.lr = cfg.lr;
  sgd.batch_size = cfg.batch_size;
  Rng rng(cfg.seed);
  train_plain(plain, data, sgd, rng);
  EXPECT_EQ(at.parameters(), plain.parameters());
}

TEST(AdvTrain, ReproducibleAndSnapshotsPerEpoch) {
  const LabeledDataset data = blobs(48, 3);
  MlpModel a = fresh_model(4), b = fresh_model(4);
  const Vector initial = a.parameters();
  const auto ta = adv_train(a, data, small_at(1.0));
  const auto tb = adv_train(b, data, small_at(1.0));
  EXPECT_EQ(a.parameters(), b.parameters());
  ASSERT_EQ(ta.snapshots.size(), 9u);
  EXPECT_EQ(ta.snapshots.front(), initial);
  EXPECT_EQ(ta.snapshots.back(), a.parameters());
  EXPECT_EQ(ta.inner_loss.size(), 8u);
  EXPECT_EQ(ta.inner_loss, tb.inner_loss);
}

TEST(AdvTrain, MoreRobustThanUndefended) {
  const auto [train, test] = split(240, 90, 7);
  const double eps = 3.0;
  MlpModel plain = fresh_model(9), at = fresh_model(9);
  AtConfig cfg = small_at(eps);
  cfg.epochs = 15;
  SgdConfig sgd;
  sgd.epochs = cfg.epochs;
  sgd.batch_size = cfg.batch_size;
  Rng rng(cfg.seed);
  train_plain(plain, train, sgd, rng);
  adv_train(at, train, cfg);
  EXPECT_GT(apgd_robust_accuracy(at, test, eps), apgd_robust_accuracy(plain, test, eps));
}

TEST(InnerAttack, ApgdReachesHigherLossThanSlide) {
  const LabeledDataset data = blobs(90, 11);
  MlpModel model = fresh_model(12);
  const AtConfig cfg = small_at(2.0);
  const auto traj = adv_train(model, data, cfg);
  for (std::size_t e = 0; e < traj.snapshots.size(); e += 4) {
    MlpModel snap = model;
    snap.set_parameters(traj.snapshots[e]);
    EXPECT_GE(inner_attack_mean_loss(snap, data, cfg, InnerAttack::Apgd, 2),
              inner_attack_mean_loss(snap, data, cfg, InnerAttack::Slide, 2))
        << "epoch " << e;
  }
}

TEST(OverfittingProbe, StrongCurveNeverAboveTrainingAttack) {
  const auto [train, test] = split(60, 30, 13);
  MlpModel model = fresh_model(15);
  const AtConfig cfg = small_at(1.5);
  const auto traj = adv_train(model, train, cfg);
  const auto rows = overfitting_probe(model, traj, train, test, 1.5, 2, cfg, 2);
  ASSERT_EQ(rows.size(), 5u * 2u * 2u);
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    EXPECT_EQ(rows[i].epoch, rows[i + 1].epoch);
    EXPECT_EQ(rows[i].split, rows[i + 1].split);
    EXPECT_EQ(rows[i].attack, "train-attack");
    EXPECT_EQ(rows[i + 1].attack, "apgd-multi-100");
    EXPECT_LE(rows[i + 1].robust_accuracy, rows[i].robust_accuracy);
  }
}

TEST(OverfittingProbe, UndefendedModelIsNotRobust) {
  const auto [train, test] = split(120, 45, 16);
  MlpModel model = fresh_model(18);
  AtConfig cfg = small_at(0.0);
  cfg.epochs = 10;
  const auto traj = adv_train(model, train, cfg);
  const auto rows = overfitting_probe(model, traj, train, test, 6.0, 10, cfg, 2);
  for (const auto& r : rows)
    if (r.epoch == 10 && r.attack == "apgd-multi-100")
      EXPECT_LE(r.robust_accuracy, 0.05) << r.split;
}

TEST(OverfittingProbe, TinyRadiusKeepsCleanAccuracy) {
  const auto [train, test] = split(60, 30, 19);
  MlpModel model = fresh_model(21);
  AtConfig cfg = small_at(0.0);
  const auto traj = adv_train(model, train, cfg);
  const auto rows = overfitting_probe(model, traj, train, test, 1e-6, 8, cfg, 2);
  for (const auto& r : rows) {
    if (r.epoch != 8) continue;
    const double clean = clean_accuracy(model, r.split == "train" ? train : test);
    EXPECT_NEAR(r.robust_accuracy, clean, 1e-12) << r.split << " " << r.attack;
  }
}
