#include "l1box/oracles.hpp"

#include "l1box/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace l1box::oracles {

OracleReport<Vector> dykstra_project(const Vector& u, const ThreatModel& tm, double tol,
                                     std::int64_t max_iter) {
  require_same_size(u, tm.dim(), "dykstra_project");
  if (!(tol > 0.0)) throw ParameterError("dykstra_project: tol must be > 0");
  if (max_iter < 1) throw ParameterError("dykstra_project: max_iter must be >= 1");

  const Eigen::Index d = u.size();
  Vector current = u;
  Vector p = Vector::Zero(d), q = Vector::Zero(d);
  Vector y_prev = u;
  OracleReport<Vector> report{u, 0, 0.0};
  for (std::int64_t it = 1; it <= max_iter; ++it) {
    const Vector y = project_l1_ball(current + p, tm.anchor(), tm.eps());
    p = current + p - y;
    const Vector next = clip_box(y + q);
    q = y + q - next;
    // Both iterates and both correction increments (current - y and
    // y - next) must settle; moving iterates alone can stall while the
    // corrections still grow.
    const double change = std::max({(next - current).lpNorm<Eigen::Infinity>(),
                                    (y - y_prev).lpNorm<Eigen::Infinity>(),
                                    (current - y).lpNorm<Eigen::Infinity>(),
                                    (y - next).lpNorm<Eigen::Infinity>()});
    current = next;
    y_prev = y;
    report.iterations = it;
    report.residual = change;
    if (change < tol) break;
  }
  report.value = current;
  return report;
}

Vector sample_feasible(const ThreatModel& tm, Rng& rng) {
  const Eigen::Index d = tm.dim();
  if (tm.eps() == 0.0) return tm.anchor();

  std::uniform_int_distribution<Eigen::Index> support_dist(1, d);
  const Eigen::Index support = support_dist(rng);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (Eigen::Index j = 0; j < support; ++j) {
    std::uniform_int_distribution<Eigen::Index> pick(j, d - 1);
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick(rng))]);
  }

  std::exponential_distribution<double> gamma1(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> mass(static_cast<std::size_t>(support));
  double total = 0.0;
  for (auto& m : mass) total += (m = gamma1(rng));
  const double radius = unit(rng) * tm.eps();

  Vector u = tm.anchor();
  for (Eigen::Index j = 0; j < support; ++j) {
    const double magnitude = total > 0.0 ? radius * mass[static_cast<std::size_t>(j)] / total : 0.0;
    u[idx[static_cast<std::size_t>(j)]] += coin(rng) ? magnitude : -magnitude;
  }
  return project_box_l1(u, tm);
}

SparsityEstimate monte_carlo_sparsity(double eps, std::int64_t d, std::int64_t n_samples, Rng& rng) {
  if (n_samples < 100) throw ParameterError("monte_carlo_sparsity: n_samples must be >= 100");
  if (d < 1) throw ParameterError("monte_carlo_sparsity: d must be >= 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x(d), w(d);
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t n = 1; n <= n_samples; ++n) {
    for (Eigen::Index i = 0; i < d; ++i) x[i] = unit(rng);
    for (Eigen::Index i = 0; i < d; ++i) w[i] = normal(rng);
    const auto step = steepest_descent_direction(w, ThreatModel(x, eps));
    const double value = static_cast<double>(count_nonzero(step.delta));
    const double delta = value - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (value - mean);
  }
  const double variance = m2 / static_cast<double>(n_samples - 1);
  return {mean, std::sqrt(variance / static_cast<double>(n_samples))};
}

OracleReport<Vector> grid_steepest_oracle(const Vector& w, const ThreatModel& tm, int resolution) {
  const Eigen::Index d = tm.dim();
  require_same_size(w, d, "grid_steepest_oracle");
  if (d > 4) throw ParameterError("grid_steepest_oracle: refuses d > 4");
  if (resolution < 2) throw ParameterError("grid_steepest_oracle: resolution must be >= 2");

  const double eps = tm.eps();
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(d));
  double bound = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lo = -std::min(tm.anchor()[i], eps);
    const double hi = std::min(1.0 - tm.anchor()[i], eps);
    auto& axis = axes[static_cast<std::size_t>(i)];
    axis.push_back(lo);
    if (hi > lo) {
      const double h = (hi - lo) / (resolution - 1);
      for (auto j = static_cast<long>(std::ceil(lo / h)); j * h <= hi; ++j) axis.push_back(j * h);
      axis.push_back(hi);
      bound += std::abs(w[i]) * h;
    }
    axis.push_back(0.0);
  }

  OracleReport<Vector> report{Vector::Zero(d), 0, bound};
  double best = 0.0;  // delta = 0 is always feasible
  std::vector<std::size_t> pos(static_cast<std::size_t>(d), 0);
  Vector delta(d);
  while (true) {
    for (Eigen::Index i = 0; i < d; ++i)
      delta[i] = axes[static_cast<std::size_t>(i)][pos[static_cast<std::size_t>(i)]];
    ++report.iterations;
    if (delta.lpNorm<1>() <= eps) {
      const double value = w.dot(delta);
      if (value > best) {
        best = value;
        report.value = delta;
      }
    }
    std::size_t axis = 0;
    while (axis < pos.size() && ++pos[axis] == axes[axis].size()) pos[axis++] = 0;
    if (axis == pos.size()) break;
  }
  return report;
}

}  // namespace l1box::oracles
