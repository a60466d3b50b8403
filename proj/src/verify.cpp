#include "l1box/verify.hpp"

#include "l1box/geometry.hpp"
#include "l1box/models.hpp"
#include "l1box/oracles.hpp"
#include "l1box/sparsity.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace l1box::verify {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Vector uniform(Eigen::Index d, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = dist(rng);
  return v;
}

Vector normal(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = dist(rng);
  return v;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

struct ProjectionCase {
  bool compared = false;
  double mismatch = 0.0;
  bool meets_conditions = false;
  bool strict = false;
  double lemma_gap = 0.0;  // ||A(u)-x||_1 - ||P_S(u)-x||_1, positive is a violation
};

bool outside_box(const Vector& v) { return (v.array() < 0.0).any() || (v.array() > 1.0).any(); }

ProjectionCase projection_case(const ProjectionSuite& cfg, std::int64_t i) {
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
  std::uniform_int_distribution<Eigen::Index> dim(1, cfg.d_max);
  const Eigen::Index d = dim(rng);
  const Vector x = uniform(d, 0.0, 1.0, rng);
  const Vector u = i % 2 == 0 ? Vector(x + normal(d, rng)) : uniform(d, -1.0, 2.0, rng);
  const double eps = cfg.radii[static_cast<std::size_t>((i / 2) % static_cast<std::int64_t>(cfg.radii.size()))];
  const ThreatModel tm(x, eps);

  ProjectionCase out;
  const Vector z = detail::project_box_l1_with_offset<double>(u, tm, cfg.lambda_offset, nullptr);
  const auto ref = oracles::dykstra_project(u, tm);
  if (ref.residual < cfg.oracle_residual) {
    out.compared = true;
    out.mismatch = (z - ref.value).lpNorm<Eigen::Infinity>();
  }

  const double exact_norm = (z - x).lpNorm<1>();
  const double approx_norm = (approx_project(u, tm) - x).lpNorm<1>();
  out.lemma_gap = approx_norm - exact_norm;
  const bool ball_leaves_box = outside_box(project_l1_ball(u, x, eps));
  const bool outside_ball = (u - x).lpNorm<1>() > eps;
  const bool on_sphere = std::abs(exact_norm - eps) <= 1e-12 * std::max(1.0, eps);
  bool moved_inside_box = false;
  for (Eigen::Index j = 0; j < d; ++j)
    if (u[j] >= 0.0 && u[j] <= 1.0 && u[j] != x[j]) moved_inside_box = true;
  out.meets_conditions = ball_leaves_box && outside_ball && (on_sphere || moved_inside_box);
  out.strict = -out.lemma_gap > cfg.lemma_slack;
  return out;
}

struct SteepestCase {
  std::int64_t samples = 0;
  std::int64_t violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  bool gridded = false;
  bool grid_ok = true;
  double grid_gap = 0.0;
};

int grid_resolution(Eigen::Index d) {
  switch (d) {
    case 1: return 4001;
    case 2: return 401;
    case 3: return 81;
    default: return 31;
  }
}

SteepestCase steepest_case(const SteepestSuite& cfg, std::int64_t i) {
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
  // Every fourth instance is small enough for the grid oracle.
  std::uniform_int_distribution<Eigen::Index> dim(1, i % 4 == 0 ? std::min<Eigen::Index>(4, cfg.d_max) : cfg.d_max);
  const Eigen::Index d = dim(rng);
  const double radii[] = {0.1, 1.0, 12.0};
  const double eps = radii[(i / 4) % 3];
  const Vector x = uniform(d, 0.0, 1.0, rng);
  const Vector w = normal(d, rng);
  const ThreatModel tm(x, eps);
  const auto step = steepest_descent_direction(w, tm);
  const double best = w.dot(step.delta);
  const double slack = cfg.slack * std::max(1.0, std::abs(best));

  SteepestCase out;
  if (!tm.contains(x + step.delta, 1e-12)) ++out.violations;
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (std::int64_t s = 0; s < cfg.samples; ++s) {
    Vector delta;
    if (s % 2 == 0) {
      delta = oracles::sample_feasible(tm, rng) - x;
    } else {
      // Perturbations of the optimum probe its neighbourhood.
      Vector u = x + step.delta;
      for (Eigen::Index j = 0; j < d; ++j) u[j] += jitter(rng);
      delta = project_box_l1(u, tm) - x;
    }
    const double gap = w.dot(delta) - best;
    out.worst = std::max(out.worst, gap);
    if (gap > slack) ++out.violations;
    ++out.samples;
  }
  if (d <= 4) {
    const auto grid = oracles::grid_steepest_oracle(w, tm, grid_resolution(d));
    const double grid_value = w.dot(grid.value);
    out.gridded = true;
    out.grid_gap = best - grid_value;
    out.grid_ok = grid_value <= best + slack && best <= grid_value + grid.residual + slack;
  }
  return out;
}

CheckResult named(std::string name) {
  CheckResult r;
  r.name = std::move(name);
  return r;
}

}  // namespace

double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

std::string summary_line(const CheckResult& r) {
  return std::string(r.pass ? "PASS " : "FAIL ") + r.name + ": " + r.detail;
}

std::vector<CheckResult> projection_suite(const ProjectionSuite& cfg) {
  if (cfg.instances < 1 || cfg.d_max < 1 || cfg.radii.empty())
    throw ParameterError("projection_suite: needs instances, d_max >= 1 and radii");
  const auto start = Clock::now();
  std::vector<ProjectionCase> cases(static_cast<std::size_t>(cfg.instances));
  parallel_for(cases.size(), cfg.threads,
               [&](std::size_t i) { cases[i] = projection_case(cfg, static_cast<std::int64_t>(i)); });
  const double elapsed = seconds_since(start);

  CheckResult proj = named("projection"), lemma = named("lemma");
  std::int64_t conditioned = 0, strict = 0;
  lemma.worst = -std::numeric_limits<double>::infinity();
  for (const auto& c : cases) {
    if (c.compared) {
      ++proj.checked;
      proj.worst = std::max(proj.worst, c.mismatch);
      if (!(c.mismatch <= cfg.tolerance)) ++proj.failures;
    }
    ++lemma.checked;
    lemma.worst = std::max(lemma.worst, c.lemma_gap);
    if (c.lemma_gap > cfg.lemma_slack) ++lemma.failures;
    if (c.meets_conditions) {
      ++conditioned;
      if (c.strict) ++strict;
    }
  }
  proj.seconds = lemma.seconds = elapsed;
  proj.pass = proj.checked > 0 && proj.failures == 0;
  proj.detail = std::to_string(proj.checked) + "/" + std::to_string(cfg.instances) +
                " instances compared (Dykstra residual < " + fmt(cfg.oracle_residual) + "), " +
                std::to_string(proj.failures) + " mismatches, worst l-inf " + fmt(proj.worst) +
                " (tol " + fmt(cfg.tolerance) + "), " + fmt(elapsed) + " s";
  const double share = conditioned > 0 ? static_cast<double>(strict) / static_cast<double>(conditioned) : 0.0;
  lemma.pass = lemma.failures == 0 && share >= cfg.strict_share;
  lemma.detail = std::to_string(lemma.failures) + " violations beyond " + fmt(cfg.lemma_slack) + " in " +
                 std::to_string(lemma.checked) + " instances, strict on " + std::to_string(strict) + "/" +
                 std::to_string(conditioned) + " meeting the strictness conditions (" + fmt(100.0 * share) +
                 "%, need " + fmt(100.0 * cfg.strict_share) + "%)";
  return {proj, lemma};
}

std::vector<CheckResult> steepest_suite(const SteepestSuite& cfg) {
  if (cfg.instances < 1 || cfg.samples < 1 || cfg.d_max < 1)
    throw ParameterError("steepest_suite: instances, samples and d_max must be >= 1");
  const auto start = Clock::now();
  std::vector<SteepestCase> cases(static_cast<std::size_t>(cfg.instances));
  parallel_for(cases.size(), cfg.threads,
               [&](std::size_t i) { cases[i] = steepest_case(cfg, static_cast<std::int64_t>(i)); });
  const double elapsed = seconds_since(start);

  CheckResult sampled = named("steepest-sampled"), grid = named("steepest-grid");
  sampled.worst = -std::numeric_limits<double>::infinity();
  for (const auto& c : cases) {
    sampled.checked += c.samples;
    sampled.failures += c.violations;
    sampled.worst = std::max(sampled.worst, c.worst);
    if (c.gridded) {
      ++grid.checked;
      grid.worst = std::max(grid.worst, c.grid_gap);
      if (!c.grid_ok) ++grid.failures;
    }
  }
  sampled.seconds = grid.seconds = elapsed;
  sampled.pass = sampled.failures == 0;
  sampled.detail = std::to_string(sampled.failures) + " violations in " + std::to_string(sampled.checked) +
                   " sampled steps over " + std::to_string(cfg.instances) +
                   " instances, max <w,delta> - <w,delta*> = " + fmt(sampled.worst) + ", " + fmt(elapsed) + " s";
  grid.pass = grid.checked > 0 && grid.failures == 0;
  grid.detail = std::to_string(grid.failures) + " outside the grid bound in " + std::to_string(grid.checked) +
                " instances with d <= 4, max <w,delta*> - <w,delta_grid> = " + fmt(grid.worst);
  return {sampled, grid};
}

std::vector<CheckResult> sparsity_suite(const SparsitySuite& cfg) {
  std::vector<CheckResult> out;
  auto start = Clock::now();

  CheckResult closed = named("sparsity-closed-form");
  const double value = expected_sparsity_closed_form(cfg.eps, cfg.d);
  closed.checked = 1;
  closed.worst = std::abs(value - cfg.expected);
  closed.pass = closed.worst <= cfg.expected_tolerance;
  closed.failures = closed.pass ? 0 : 1;
  closed.seconds = seconds_since(start);
  closed.detail = "E||delta*||_0 at eps=" + fmt(cfg.eps) + ", d=" + std::to_string(cfg.d) + " is " +
                  std::to_string(value) + " vs " + fmt(cfg.expected) + " (tol " + fmt(cfg.expected_tolerance) + ")";
  out.push_back(closed);

  start = Clock::now();
  CheckResult mc = named("sparsity-monte-carlo");
  Rng rng(cfg.seed);
  const auto est = oracles::monte_carlo_sparsity(cfg.eps, cfg.d, cfg.mc_samples, rng);
  mc.checked = cfg.mc_samples;
  mc.worst = std::abs(est.mean - cfg.expected) / est.stderr_;
  mc.pass = mc.worst <= 3.0;
  mc.failures = mc.pass ? 0 : 1;
  mc.seconds = seconds_since(start);
  mc.detail = "mean " + std::to_string(est.mean) + " +- " + fmt(est.stderr_) + " over " +
              std::to_string(cfg.mc_samples) + " samples vs " + fmt(cfg.expected) + " (" + fmt(mc.worst) +
              " stderr, need <= 3)";
  out.push_back(mc);

  CheckResult bound = named("sparsity-lower-bound");
  const double lb = expected_sparsity_lower_bound(cfg.eps);
  bound.checked = 2;
  bound.failures = (value >= lb ? 0 : 1) + (est.mean >= lb ? 0 : 1);
  bound.pass = bound.failures == 0;
  bound.detail = "closed form " + std::to_string(value) + " and Monte-Carlo " + std::to_string(est.mean) +
                 " vs bound " + fmt(lb);
  out.push_back(bound);

  start = Clock::now();
  CheckResult ih = named("sparsity-irwin-hall");
  const std::vector<double> radii = {0.05, 0.5, 1.0, 2.5, 3.0, 5.0, 7.3, 10.0, 12.0, 15.0, 17.5, 20.0};
  const std::vector<std::int64_t> dims = {2, 5, 10, 41, 100, 257, 1000, 3024, 4000};
  for (double eps : radii) {
    if (eps > cfg.max_eps) continue;
    for (std::int64_t d : dims) {
      if (d > cfg.max_d || eps > static_cast<double>(d - 1) / 2.0) continue;
      const double gap = std::abs(expected_sparsity_closed_form(eps, d) - expected_sparsity_irwin_hall(eps, d));
      ++ih.checked;
      ih.worst = std::max(ih.worst, gap);
      if (!(gap <= cfg.identity_tolerance)) ++ih.failures;
    }
  }
  ih.seconds = seconds_since(start);
  ih.pass = ih.checked > 0 && ih.failures == 0;
  ih.detail = std::to_string(ih.failures) + " disagreements in " + std::to_string(ih.checked) +
              " (eps, d) pairs with eps <= " + fmt(cfg.max_eps) + ", d <= " + std::to_string(cfg.max_d) +
              ", worst " + fmt(ih.worst) + " (tol " + fmt(cfg.identity_tolerance) + ")";
  out.push_back(ih);
  return out;
}

std::vector<CheckResult> gradient_suite(const GradientSuite& cfg) {
  if (cfg.points < 1 || cfg.d < 1 || cfg.classes < 4)
    throw ParameterError("gradient_suite: needs points >= 1, d >= 1 and at least 4 classes");
  Rng rng(cfg.seed);
  const auto linear = LinearSoftmaxModel::random(cfg.d, cfg.classes, 1.0, rng);
  const MlpModel mlp({cfg.d, 12, 8, cfg.classes}, rng);
  const std::vector<const DifferentiableClassifier*> models = {&linear, &mlp};
  std::vector<CheckResult> out;

  auto finish = [&](CheckResult& r, const std::string& what) {
    r.pass = r.failures == 0;
    r.detail = std::to_string(r.failures) + "/" + std::to_string(r.checked) + " points above " +
               fmt(cfg.tolerance) + ", worst relative l2 error " + fmt(r.worst) + " (" + what + ")";
    out.push_back(r);
  };

  for (const auto* model : models)
    for (LossKind kind : {LossKind::CrossEntropy, LossKind::DlrTargeted, LossKind::Margin}) {
      CheckResult r = named("gradient-" + model->kind() + "-" + to_string(kind));
      for (int p = 0; p < cfg.points; ++p) {
        const Vector x = uniform(cfg.d, 0.0, 1.0, rng);
        const int y = p % cfg.classes;
        std::optional<int> target;
        if (kind == LossKind::DlrTargeted) target = (y + 1 + p % (cfg.classes - 1)) % cfg.classes;
        const Vector analytic = loss_and_grad(*model, x, y, kind, target).grad;
        const Vector numeric = finite_diff_grad(*model, x, y, kind, cfg.h, target);
        const double err = relative_error(analytic, numeric);
        ++r.checked;
        r.worst = std::max(r.worst, err);
        if (!(err <= cfg.tolerance)) ++r.failures;
      }
      finish(r, "input gradient");
    }

  for (const auto* model : models) {
    CheckResult r = named("gradient-" + model->kind() + "-parameters");
    auto probe = model->clone();
    const Vector base = model->parameters();
    for (int p = 0; p < cfg.points; ++p) {
      const Vector x = uniform(cfg.d, 0.0, 1.0, rng);
      const int y = p % cfg.classes;
      const Vector analytic = model->grad_parameters(x, cross_entropy_grad(model->logits(x), y));
      Vector numeric(base.size());
      Vector params = base;
      for (Eigen::Index j = 0; j < base.size(); ++j) {
        params[j] = base[j] + cfg.h;
        probe->set_parameters(params);
        const double up = cross_entropy(probe->logits(x), y);
        params[j] = base[j] - cfg.h;
        probe->set_parameters(params);
        const double down = cross_entropy(probe->logits(x), y);
        params[j] = base[j];
        numeric[j] = (up - down) / (2.0 * cfg.h);
      }
      const double err = relative_error(analytic, numeric);
      ++r.checked;
      r.worst = std::max(r.worst, err);
      if (!(err <= cfg.tolerance)) ++r.failures;
    }
    finish(r, "cross-entropy parameter gradient");
  }
  return out;
}

}  // namespace l1box::verify
