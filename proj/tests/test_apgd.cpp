#include "l1box/apgd.hpp"
#include "l1box/geometry.hpp"
#include "l1box/oracles.hpp"
#include "quadratic.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace l1box;

namespace {

std::vector<int> range(int first, int last, int step) {
  std::vector<int> out;
  for (int n = first; n <= last; n += step) out.push_back(n);
  return out;
}

bool same_result(const AttackResult& a, const AttackResult& b) {
  return a.x_adv == b.x_adv && a.loss_best == b.loss_best && a.success == b.success &&
         a.iterations_used == b.iterations_used && a.loss_trace == b.loss_trace &&
         a.success_trace == b.success_trace && a.gradient_evals == b.gradient_evals &&
         a.forward_evals == b.forward_evals;
}

struct LinearSetup {
  LinearSoftmaxModel model;
  Vector x;
  int y;
};

LinearSetup linear_setup(Eigen::Index d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  LinearSetup s{LinearSoftmaxModel::random(d, classes, 1.0, rng),
                fixtures::uniform_vector(d, 0.05, 0.95, rng), 0};
  s.y = predict(s.model.logits(s.x));
  return s;
}

}  // namespace

TEST(Checkpoints, EveryFourthOfHundred) {
  EXPECT_EQ(checkpoints(100, 0.04), range(4, 100, 4));
}

TEST(Checkpoints, ShortBudgetsRecomputeEveryIteration) {
  EXPECT_EQ(checkpoints(10, 0.04), range(1, 10, 1));
  EXPECT_EQ(checkpoints(25, 0.04), range(1, 25, 1));
  EXPECT_EQ(checkpoints(26, 0.04), range(2, 26, 2));
}

TEST(SparsityUpdate, HalfChangedCoordinates) {
  Vector x = Vector::Zero(3072), best = x;
  best.head(1536).setConstant(0.5);
  EXPECT_NEAR(sparsity_update(best, x, 1.5), 1.0 / 3.0, 1e-15);
}

TEST(SparsityUpdate, FloorsAtOneCoordinate) {
  const Vector x = Vector::Constant(50, 0.3);
  EXPECT_EQ(sparsity_update(x, x, 1.5), 1.0 / 50.0);
  EXPECT_EQ(support_size(sparsity_update(x, x, 1.5), 50), 1);
}

TEST(SparsityUpdate, ThirtyOfHundred) {
  Vector x = Vector::Zero(100), best = x;
  best.tail(30).setConstant(-0.1);
  EXPECT_NEAR(sparsity_update(best, x, 1.5), 0.2, 1e-15);
}

TEST(StepSizeUpdate, DecaysWhileSparsityIsStable) {
  const ApgdConfig cfg;
  const double eps = 12.0;
  const auto a = step_size_update(eps, 0.1, 0.1, eps, cfg);
  EXPECT_DOUBLE_EQ(a.eta, eps / 1.5);
  EXPECT_FALSE(a.restart_from_best);
  const auto b = step_size_update(eps / 10.0, 0.2, 0.2, eps, cfg);
  EXPECT_DOUBLE_EQ(b.eta, eps / 10.0);
  EXPECT_FALSE(b.restart_from_best);
}

TEST(StepSizeUpdate, ResetsWhenSparsityDrops) {
  const ApgdConfig cfg;
  const auto r = step_size_update(0.7, 0.05, 0.1, 3.0, cfg);
  EXPECT_EQ(r.eta, 3.0);
  EXPECT_TRUE(r.restart_from_best);
  EXPECT_THROW(step_size_update(1.0, 0.1, 0.0, 1.0, cfg), ParameterError);
}

TEST(StepSizeUpdate, RatioBoundary) {
  const ApgdConfig cfg;
  EXPECT_FALSE(step_size_update(1.0, 0.95, 1.0, 1.0, cfg).restart_from_best);
  EXPECT_TRUE(step_size_update(1.0, 0.9499, 1.0, 1.0, cfg).restart_from_best);
}

TEST(RandomSignDirection, UnitL1NormOnTCoordinates) {
  Rng rng(3);
  const Vector h = random_sign_direction(40, 7, rng);
  EXPECT_EQ(count_nonzero(h), 7);
  EXPECT_NEAR(h.lpNorm<1>(), 1.0, 1e-15);
}

TEST(ApgdSingle, OneStepDoesNotDecreaseCrossEntropy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = linear_setup(30, 4, seed);
    const ThreatModel tm(s.x, 1.0);
    const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
    Vector first;
    Rng rng(seed);
    apgd_single(obj, tm, ApgdConfig::single_eps(1), s.x, rng,
                [&](int, const Vector& z, double) { first = z; });
    EXPECT_GE(cross_entropy(s.model.logits(first), s.y), cross_entropy(s.model.logits(s.x), s.y));
  }
}

TEST(ApgdSingle, ConcaveObjectiveReachesPeak) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = fixtures::uniform_vector(192, 0.0, 1.0, rng);
    const ThreatModel tm(x, 1.0);
    const Vector z0 =
        project_box_l1(Vector(x + 0.1 * fixtures::normal_vector(192, rng)), tm);
    const fixtures::NegativeSquaredDistance obj(z0);
    const auto r = apgd_single(obj, tm, ApgdConfig::single_eps(100), x, rng);
    EXPECT_GE(r.loss_best, -1e-3) << "trial " << trial;
  }
}

TEST(ApgdSingle, DeterministicUnderSeed) {
  const auto s = linear_setup(64, 5, 7);
  const ThreatModel tm(s.x, 2.0);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  Rng a(99), b(99);
  const auto ra = apgd_single(obj, tm, ApgdConfig::single_eps(50), s.x, a);
  const auto rb = apgd_single(obj, tm, ApgdConfig::single_eps(50), s.x, b);
  EXPECT_TRUE(same_result(ra, rb));
}

TEST(ApgdSingle, IteratesFeasibleAndBestMonotone) {
  const auto s = linear_setup(48, 3, 5);
  const ThreatModel tm(s.x, 3.0);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  Rng rng(1);
  int seen = 0;
  const auto r = apgd_single(obj, tm, ApgdConfig::single_eps(60), s.x, rng,
                             [&](int i, const Vector& z, double radius) {
                               EXPECT_EQ(i, ++seen);
                               EXPECT_EQ(radius, 3.0);
                               EXPECT_TRUE(tm.contains(z, 1e-9));
                             });
  EXPECT_EQ(seen, 60);
  ASSERT_EQ(r.loss_trace.size(), 60u);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i)
    EXPECT_GE(r.loss_trace[i], r.loss_trace[i - 1]);
  EXPECT_TRUE(tm.contains(r.x_adv, 1e-9));
  EXPECT_NEAR(r.l1_norm, (r.x_adv - s.x).lpNorm<1>(), 1e-12);
}

TEST(ApgdSingle, BudgetIsNIterGradientsPlusOneForward) {
  const auto s = linear_setup(20, 3, 2);
  const ThreatModel tm(s.x, 1.0);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  for (int n : {1, 2, 10, 37}) {
    Rng rng(4);
    const auto r = apgd_single(obj, tm, ApgdConfig::single_eps(n), s.x, rng);
    EXPECT_EQ(r.gradient_evals, n);
    EXPECT_EQ(r.forward_evals, 1);
    EXPECT_EQ(r.iterations_used, n);
  }
}

TEST(ApgdSingle, ZeroGradientTakesRandomSteps) {
  const ConstantModel model(Vector::LinSpaced(3, 0.0, 1.0), 10);
  const ClassifierObjective obj(model, LossKind::CrossEntropy, 2);
  const Vector x = Vector::Constant(10, 0.5);
  const ThreatModel tm(x, 1.0);
  Rng rng(0);
  const auto r = apgd_single(obj, tm, ApgdConfig::single_eps(8), x, rng,
                             [&](int, const Vector& z, double) { EXPECT_TRUE(tm.contains(z, 1e-9)); });
  EXPECT_EQ(r.zero_grad_steps, 8);
}

TEST(ApgdSingle, RejectsInfeasibleStartAndBadConfig) {
  const fixtures::NegativeSquaredDistance obj(Vector::Zero(4));
  const ThreatModel tm(Vector::Zero(4), 1.0);
  Rng rng(0);
  EXPECT_THROW(apgd_single(obj, tm, ApgdConfig::single_eps(5), Vector::Constant(4, 0.5), rng),
               InvariantError);
  EXPECT_THROW(apgd_single(obj, tm, ApgdConfig::single_eps(0), Vector::Zero(4), rng),
               ParameterError);
}

TEST(ApgdMulti, PhaseLengthsAndRadii) {
  const auto s = linear_setup(32, 3, 8);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  for (auto [n, lens] : {std::pair{100, std::vector<int>{30, 30, 40}},
                         std::pair{10, std::vector<int>{3, 3, 4}}}) {
    std::vector<int> counts(3, 0);
    std::vector<double> radii = {3.0, 2.0, 1.0};
    int last = 0;
    Rng rng(1);
    const auto r = apgd_multi(obj, s.x, 1.0, ApgdConfig::multi_eps(n), rng, std::nullopt,
                              [&](int i, const Vector& z, double radius) {
                                EXPECT_EQ(i, last + 1);
                                last = i;
                                const ThreatModel tm(s.x, radius);
                                EXPECT_TRUE(tm.contains(z, 1e-9));
                                for (int p = 0; p < 3; ++p)
                                  if (radius == radii[static_cast<std::size_t>(p)])
                                    ++counts[static_cast<std::size_t>(p)];
                              });
    EXPECT_EQ(counts, lens);
    EXPECT_LE((r.x_adv - s.x).lpNorm<1>(), 1.0 + 1e-9);
    EXPECT_EQ(r.gradient_evals + r.forward_evals, n + 3);
    EXPECT_EQ(r.loss_trace.size(), static_cast<std::size_t>(n));
  }
}

TEST(ApgdMulti, BestLossCountsOnlyFinalPhase) {
  const auto s = linear_setup(32, 3, 9);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  Rng rng(2);
  const auto r = apgd_multi(obj, s.x, 0.5, ApgdConfig::multi_eps(20), rng);
  EXPECT_DOUBLE_EQ(r.loss_best, obj.evaluate(r.x_adv, false).value);
  EXPECT_DOUBLE_EQ(r.loss_best, r.loss_trace.back());
  EXPECT_THROW(apgd_multi(obj, s.x, 0.5, ApgdConfig::single_eps(20), rng), ParameterError);
}

TEST(RestartTarget, CyclesThroughRunnerUps) {
  Vector z(5);
  z << 5.0, 1.0, 4.0, 3.0, 2.0;
  EXPECT_EQ(restart_target(z, 0, 0), 2);
  EXPECT_EQ(restart_target(z, 0, 1), 3);
  EXPECT_EQ(restart_target(z, 0, 3), 1);
  EXPECT_EQ(restart_target(z, 0, 4), 2);
  EXPECT_EQ(restart_target(z, 2, 0), 0);
}

TEST(ApgdRestarts, SingleRestartEqualsOneMultiRun) {
  const auto s = linear_setup(40, 4, 3);
  const auto cfg = ApgdConfig::multi_eps(30);
  Rng a(5), b(5);
  const auto restarts = apgd_restarts(s.model, LossKind::CrossEntropy, s.x, s.y, 1.0, cfg, 1, a);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  const auto single = apgd_multi(obj, s.x, 1.0, cfg, b, s.x);
  EXPECT_TRUE(same_result(restarts, single));
}

TEST(ApgdRestarts, EarlyStopSkipsRemainingRuns) {
  const auto s = linear_setup(40, 3, 4);
  auto cfg = ApgdConfig::multi_eps(40);
  Rng a(1), b(1);
  const auto full = apgd_restarts(s.model, LossKind::CrossEntropy, s.x, s.y, 40.0, cfg, 5, a);
  EXPECT_EQ(full.iterations_used, 200);
  cfg.early_stop = true;
  const auto r = apgd_restarts(s.model, LossKind::CrossEntropy, s.x, s.y, 40.0, cfg, 5, b);
  ASSERT_TRUE(r.success);
  EXPECT_LT(r.iterations_used, 200);
  EXPECT_LE(r.gradient_evals + r.forward_evals, r.iterations_used + 5 * 3);
}

TEST(ApgdRestarts, BestOverRunsDominatesEachRun) {
  const auto s = linear_setup(40, 4, 6);
  const auto cfg = ApgdConfig::single_eps(20);
  Rng rng(8);
  const auto all = apgd_restarts(s.model, LossKind::CrossEntropy, s.x, s.y, 0.3, cfg, 4, rng);
  const ThreatModel tm(s.x, 0.3);
  const ClassifierObjective obj(s.model, LossKind::CrossEntropy, s.y);
  Rng replay(8);
  for (int r = 0; r < 4; ++r) {
    const Vector init = r == 0 ? s.x : oracles::sample_feasible(tm, replay);
    const auto run = apgd_run(obj, s.x, 0.3, cfg, replay, init);
    if (!all.success) EXPECT_GE(all.loss_best, run.loss_best);
  }
  EXPECT_EQ(all.gradient_evals, 80);
  EXPECT_EQ(all.forward_evals, 4);
}

TEST(ApgdRestarts, TargetedNeedsFourClasses) {
  const auto s = linear_setup(10, 3, 1);
  Rng rng(0);
  EXPECT_THROW(apgd_restarts(s.model, LossKind::DlrTargeted, s.x, s.y, 1.0,
                             ApgdConfig::single_eps(5), 1, rng),
               UnsupportedError);
}
