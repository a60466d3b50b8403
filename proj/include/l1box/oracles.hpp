#ifndef L1BOX_ORACLES_HPP
#define L1BOX_ORACLES_HPP

// Brute-force and iterative reference implementations. They exist to check
// the geometry and attack code and are not used on any production path.

#include "l1box/core.hpp"

#include <cstdint>

namespace l1box::oracles {

template <typename Value>
struct OracleReport {
  Value value;
  std::int64_t iterations = 0;
  double residual = 0.0;
};

/// Dykstra's alternating projections between B1(x, eps) and [0,1]^d with
/// correction terms. Stops once successive iterates, and the gaps between the
/// two projections, fall below tol in l-infinity; residual holds that value.
OracleReport<Vector> dykstra_project(const Vector& u, const ThreatModel& tm,
                                     double tol = 1e-10, std::int64_t max_iter = 50000);

/// Random point of S: random support size, signs and Dirichlet magnitudes
/// scaled to a random fraction of eps, then projected onto S.
Vector sample_feasible(const ThreatModel& tm, Rng& rng);

struct SparsityEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Sample mean and standard error of ||delta*||_0 for x ~ U([0,1]^d),
/// w ~ N(0, I).
SparsityEstimate monte_carlo_sparsity(double eps, std::int64_t d, std::int64_t n_samples, Rng& rng);

/// Exhaustive grid search for max <w, delta> over the feasible steps, d <= 4.
/// The grid contains 0 and the interval ends on each axis; residual is the
/// bound sum_i |w_i| * spacing_i on the gap to the true optimum.
OracleReport<Vector> grid_steepest_oracle(const Vector& w, const ThreatModel& tm, int resolution);

}  // namespace l1box::oracles

#endif  // L1BOX_ORACLES_HPP
