#ifndef L1BOX_VERIFY_HPP
#define L1BOX_VERIFY_HPP

// Oracle suites comparing the geometry, sparsity and model code against the
// independent references in oracles.hpp. Shared by the `verify` command and
// the acceptance tests.

#include "l1box/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace l1box::verify {

struct CheckResult {
  std::string name;
  bool pass = true;
  std::int64_t checked = 0;
  std::int64_t failures = 0;
  /// Largest residual seen (meaning depends on the check).
  double worst = 0.0;
  double seconds = 0.0;
  std::string detail;
};

struct ProjectionSuite {
  std::int64_t instances = 10000;
  Eigen::Index d_max = 128;
  std::vector<double> radii = {0.1, 1.0, 12.0};
  double tolerance = 1e-6;
  /// Dykstra runs whose residual is at or above this are not compared.
  double oracle_residual = 1e-8;
  double lemma_slack = 1e-9;
  /// Required share of strict Lemma instances among those meeting its conditions.
  double strict_share = 0.01;
  /// Test hook: shifts the dual variable of the projection under test.
  double lambda_offset = 0.0;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Exact projection against Dykstra, then the Lemma inequality on the same
/// instances. Returns {"projection", "lemma"}.
std::vector<CheckResult> projection_suite(const ProjectionSuite& cfg);

struct SteepestSuite {
  std::int64_t instances = 1000;
  std::int64_t samples = 10000;
  Eigen::Index d_max = 128;
  double slack = 1e-12;
  std::uint64_t seed = 2;
  int threads = 1;
};

/// <w, delta*> against sampled feasible steps, and against the grid oracle
/// for d <= 4. Returns {"steepest-sampled", "steepest-grid"}.
std::vector<CheckResult> steepest_suite(const SteepestSuite& cfg);

struct SparsitySuite {
  double eps = 12.0;
  std::int64_t d = 3024;
  double expected = 24.6667;
  double expected_tolerance = 0.01;
  std::int64_t mc_samples = 100000;
  double identity_tolerance = 1e-9;
  double max_eps = 20.0;
  std::int64_t max_d = 4000;
  std::uint64_t seed = 3;
};

/// Closed form vs the reference value, Monte-Carlo estimate, lower bound and
/// the Irwin-Hall identity. Returns {"sparsity-closed-form",
/// "sparsity-monte-carlo", "sparsity-lower-bound", "sparsity-irwin-hall"}.
std::vector<CheckResult> sparsity_suite(const SparsitySuite& cfg);

struct GradientSuite {
  int points = 100;
  Eigen::Index d = 10;
  int classes = 5;
  double h = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 4;
};

/// Input gradients of every (model, loss) pair and the parameter gradient of
/// the cross-entropy against central differences. One result per pair.
std::vector<CheckResult> gradient_suite(const GradientSuite& cfg);

/// ||a - b||_2 / max(||a||_2, ||b||_2), 0 when both vanish.
double relative_error(const Vector& a, const Vector& b);

/// "PASS name: detail" or "FAIL name: detail".
std::string summary_line(const CheckResult& r);

}  // namespace l1box::verify

#endif  // L1BOX_VERIFY_HPP
