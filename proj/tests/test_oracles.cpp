#include "l1box/geometry.hpp"
#include "l1box/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace l1box;
using namespace l1box::oracles;

TEST(Dykstra, FeasiblePointConvergesImmediately) {
  const ThreatModel tm(Vector::Constant(3, 0.5), 1.0);
  const Vector u = Vector::Constant(3, 0.6);
  const auto r = dykstra_project(u, tm, 1e-10);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.value, u);
}

TEST(Dykstra, HugeRadiusGivesClip) {
  Rng rng(2);
  const ThreatModel tm(fixtures::uniform_vector(6, 0.0, 1.0, rng), 6.0);
  const Vector u = fixtures::uniform_vector(6, -1.0, 2.0, rng);
  EXPECT_LE((dykstra_project(u, tm).value - clip_box(u)).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Dykstra, HandWorkedExample) {
  Vector x(3), u(3);
  x << 0.2, 0.5, 0.9;
  u << 1.4, 0.1, 0.9;
  const auto r = dykstra_project(u, ThreatModel(x, 0.5), 1e-8);
  Vector expected(3);
  expected << 0.7, 0.5, 0.9;
  EXPECT_LE((r.value - expected).lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_GE(r.residual, 0.0);
}

TEST(Dykstra, ReportsNonConvergence) {
  Rng rng(4);
  const ThreatModel tm(fixtures::uniform_vector(64, 0.0, 1.0, rng), 12.0);
  const Vector u = fixtures::uniform_vector(64, -1.0, 2.0, rng);
  const auto r = dykstra_project(u, tm, 1e-14, 2);
  EXPECT_LE(r.iterations, 2);
  EXPECT_GT(r.residual, 1e-14);
  EXPECT_THROW(dykstra_project(u, tm, 0.0), ParameterError);
}

TEST(SampleFeasible, AlwaysInSetAndDeterministic) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index d = 1 + trial % 40;
    const ThreatModel tm(fixtures::uniform_vector(d, 0.0, 1.0, rng), 0.05 * (trial % 60 + 1));
    ASSERT_TRUE(tm.contains(sample_feasible(tm, rng)));
  }
  const ThreatModel tm(Vector::Constant(10, 0.5), 2.0);
  Rng a(42), b(42);
  EXPECT_EQ(sample_feasible(tm, a), sample_feasible(tm, b));
  const ThreatModel point(Vector::Constant(10, 0.5), 0.0);
  EXPECT_EQ(sample_feasible(point, a), point.anchor());
}

TEST(MonteCarloSparsity, StandardErrorShrinksWithSamples) {
  Rng rng(8);
  const auto small = monte_carlo_sparsity(2.0, 40, 1000, rng);
  const auto large = monte_carlo_sparsity(2.0, 40, 16000, rng);
  const double ratio = small.stderr_ / large.stderr_;
  EXPECT_GT(ratio, 4.0 / 1.5);
  EXPECT_LT(ratio, 4.0 * 1.5);
  EXPECT_THROW(monte_carlo_sparsity(2.0, 40, 50, rng), ParameterError);
}

TEST(GridSteepest, ZeroWeightAndSaturatedBox) {
  const ThreatModel tm(Vector::Constant(3, 0.5), 3.0);
  const auto zero = grid_steepest_oracle(Vector::Zero(3), tm, 11);
  EXPECT_EQ(zero.value, Vector::Zero(3));
  Vector w(3);
  w << 1.0, -2.0, 0.5;
  const auto best = grid_steepest_oracle(w, tm, 11);
  EXPECT_NEAR(w.dot(best.value), 0.5 * w.lpNorm<1>(), 1e-12);
}

TEST(GridSteepest, NeverBeatsExactStep) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const ThreatModel tm(fixtures::uniform_vector(3, 0.0, 1.0, rng), 0.3 + 0.05 * trial);
    const Vector w = fixtures::normal_vector(3, rng);
    const auto grid = grid_steepest_oracle(w, tm, 60);
    EXPECT_LE(w.dot(grid.value), steepest_descent_direction(w, tm).inner_product + 1e-12);
  }
  EXPECT_THROW(grid_steepest_oracle(Vector::Zero(5), ThreatModel(Vector::Zero(5), 1.0), 10), ParameterError);
}
