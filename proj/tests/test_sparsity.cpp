#include "l1box/oracles.hpp"
#include "l1box/sparsity.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace l1box;

TEST(IrwinHall, SmallCases) {
  EXPECT_NEAR(irwin_hall_cdf(0.3, 1), 0.3, 1e-15);
  EXPECT_NEAR(irwin_hall_cdf(1.0, 2), 0.5, 1e-15);
  EXPECT_NEAR(irwin_hall_cdf(2.5, 5), 0.5, 1e-14);
  EXPECT_EQ(irwin_hall_cdf(0.7, 0), 1.0);
  EXPECT_EQ(irwin_hall_cdf(3.0, 3), 1.0);
  EXPECT_EQ(irwin_hall_cdf(0.0, 4), 0.0);
  // P(U1 + U2 <= 1.5) = 1 - 0.5^2 / 2.
  EXPECT_NEAR(irwin_hall_cdf(1.5, 2), 0.875, 1e-15);
}

TEST(IrwinHall, MatchesSimplexVolumeBelowOne) {
  // For eps <= 1 the CDF is eps^n / n!.
  for (int n = 1; n < 30; ++n) EXPECT_NEAR(irwin_hall_cdf(0.8, n), std::pow(0.8, n) / std::tgamma(n + 1.0), 1e-15);
}

TEST(ExpectedSparsity, TruncatedExponentialSeries) {
  // eps < 1: E = sum_{m=0}^{d-1} eps^m / m!.
  double series = 0.0, term = 1.0;
  for (int m = 0; m < 10; ++m) {
    series += term;
    term *= 0.5 / (m + 1);
  }
  EXPECT_NEAR(series, 1.64872, 1e-5);
  EXPECT_NEAR(expected_sparsity_closed_form(0.5, 10), series, 1e-12);
  EXPECT_NEAR(expected_sparsity_irwin_hall(0.5, 10), series, 1e-12);
}

TEST(ExpectedSparsity, ReferenceValueAtTwelve) {
  EXPECT_NEAR(expected_sparsity_closed_form(12.0, 3024), 24.6667, 0.01);
  EXPECT_GE(expected_sparsity_closed_form(12.0, 3024), expected_sparsity_lower_bound(12.0));
  EXPECT_DOUBLE_EQ(expected_sparsity_lower_bound(12.0), 18.5);
}

TEST(ExpectedSparsity, ClosedFormAgreesWithIrwinHallSum) {
  for (double eps : {0.3, 1.0, 2.5, 7.75, 12.0, 19.9})
    for (std::int64_t d : {50, 400, 4000}) {
      if (eps > (d - 1) / 2.0) continue;
      EXPECT_NEAR(expected_sparsity_closed_form(eps, d), expected_sparsity_irwin_hall(eps, d), 1e-9)
          << eps << " " << d;
    }
}

TEST(ExpectedSparsity, AboveLowerBound) {
  for (double eps = 0.25; eps <= 20.0; eps += 0.25)
    EXPECT_GE(expected_sparsity_closed_form(eps, 200) + 1e-12, expected_sparsity_lower_bound(eps)) << eps;
}

TEST(ExpectedSparsity, RejectsOutOfRange) {
  EXPECT_THROW(expected_sparsity_closed_form(0.0, 10), ParameterError);
  EXPECT_THROW(expected_sparsity_closed_form(5.0, 10), ParameterError);
}

TEST(ExpectedSparsity, MonteCarloAgreesOnSmallInstance) {
  Rng rng(1);
  const auto est = oracles::monte_carlo_sparsity(0.5, 10, 20000, rng);
  EXPECT_NEAR(est.mean, expected_sparsity_closed_form(0.5, 10), 3.0 * est.stderr_ + 1e-3);
}
