#include "l1box/apgd.hpp"

#include "l1box/geometry.hpp"
#include "l1box/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace l1box {

ClassifierObjective::ClassifierObjective(const LogitsOracle& model, LossKind kind, int label,
                                         std::optional<int> target)
    : model_(model), kind_(kind), label_(label), target_(target) {
  if (label < 0 || label >= model.num_classes())
    throw ParameterError("ClassifierObjective: label out of range");
  if (kind == LossKind::DlrTargeted && !target)
    throw ParameterError("ClassifierObjective: dlr-targeted needs a target class");
}

Evaluation ClassifierObjective::evaluate(const Vector& x, bool with_grad) const {
  Evaluation ev;
  const Vector z = model_.logits(x);
  ev.success = !is_correct(z, label_);
  ev.value = loss_on_logits(z, label_, kind_, target_);
  if (with_grad) ev.grad = model_.grad_input(x, loss_logit_grad(z, label_, kind_, target_));
  return ev;
}

ApgdConfig ApgdConfig::single_eps(int n_iter) {
  ApgdConfig cfg;
  cfg.n_iter = n_iter;
  return cfg;
}

ApgdConfig ApgdConfig::multi_eps(int n_iter) {
  ApgdConfig cfg;
  cfg.n_iter = n_iter;
  cfg.phases = {{0.3, 3.0}, {0.3, 2.0}, {0.4, 1.0}};
  return cfg;
}

void ApgdConfig::validate() const {
  if (n_iter < 1) throw ParameterError("ApgdConfig: n_iter must be >= 1");
  if (!(k0 > 0.0 && k0 <= 1.0)) throw ParameterError("ApgdConfig: k0 must lie in (0, 1]");
  if (!(checkpoint_fraction > 0.0 && checkpoint_fraction <= 1.0))
    throw ParameterError("ApgdConfig: checkpoint_fraction must lie in (0, 1]");
  if (!(sparsity_divisor > 0.0) || !(step_decay >= 1.0) || !(eta_min_divisor >= 1.0) ||
      !(rho > 0.0))
    throw ParameterError("ApgdConfig: invalid schedule constants");
  if (!phases.empty()) {
    double total = 0.0;
    for (const auto& p : phases) {
      if (!(p.fraction >= 0.0) || !(p.radius_multiplier > 0.0))
        throw ParameterError("ApgdConfig: invalid phase");
      total += p.fraction;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ParameterError("ApgdConfig: phase fractions must sum to 1");
  }
}

std::vector<int> checkpoints(int n_iter, double fraction) {
  const int m = std::max(1, static_cast<int>(std::ceil(fraction * n_iter - 1e-12)));
  std::vector<int> out;
  for (int n = m; n <= n_iter; n += m) out.push_back(n);
  return out;
}

double sparsity_update(const Vector& x_best, const Vector& x, double divisor) {
  require_same_size(x_best, x.size(), "sparsity_update");
  const auto d = static_cast<double>(x.size());
  const auto changed = static_cast<double>(count_nonzero(x_best - x));
  return std::max(changed / (divisor * d), 1.0 / d);
}

StepSizeUpdate step_size_update(double eta_prev, double k_new, double k_old, double eps,
                                const ApgdConfig& cfg) {
  if (!(k_old > 0.0)) throw ParameterError("step_size_update: k_old must be > 0");
  if (k_new / k_old >= cfg.rho)
    return {std::max(eta_prev / cfg.step_decay, eps / cfg.eta_min_divisor), false};
  return {eps, true};
}

Eigen::Index support_size(double k, Eigen::Index d) {
  const auto t = static_cast<Eigen::Index>(std::ceil(k * static_cast<double>(d) - 1e-9));
  return std::clamp<Eigen::Index>(t, 1, d);
}

Vector random_sign_direction(Eigen::Index d, Eigen::Index t, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::bernoulli_distribution coin(0.5);
  Vector h = Vector::Zero(d);
  for (Eigen::Index j = 0; j < t; ++j) {
    std::uniform_int_distribution<Eigen::Index> pick(j, d - 1);
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick(rng))]);
    h[idx[static_cast<std::size_t>(j)]] = coin(rng) ? 1.0 : -1.0;
  }
  return h / static_cast<double>(t);
}

namespace {

AttackResult apgd_single_impl(const Objective& objective, const ThreatModel& tm,
                              const ApgdConfig& cfg, const Vector& x_init, Rng& rng,
                              const IterateObserver& observer, int iter_offset) {
  const Eigen::Index d = tm.dim();
  require_same_size(x_init, d, "apgd_single");
  if (objective.dim() != d) throw DimensionError("apgd_single: objective dimension mismatch");
  if (!tm.contains(x_init)) throw InvariantError("apgd_single: x_init is not in the threat set");

  const double eps = tm.eps();
  auto project = [&](const Vector& u) {
    return cfg.exact_projection ? project_box_l1(u, tm) : approx_project(u, tm);
  };

  AttackResult result;
  Evaluation ev = objective.evaluate(x_init, true);
  ++result.gradient_evals;

  Vector x_cur = x_init, grad_cur = ev.grad;
  Vector x_best = x_init, grad_best = ev.grad;
  double loss_best = ev.value;
  bool best_success = ev.success, any_success = ev.success;
  Vector x_success = x_init;

  std::vector<bool> is_checkpoint(static_cast<std::size_t>(cfg.n_iter) + 1, false);
  for (int c : checkpoints(cfg.n_iter, cfg.checkpoint_fraction)) is_checkpoint[static_cast<std::size_t>(c)] = true;

  double k = cfg.k0;
  double eta = eps;
  int done = 0;
  if (!(cfg.early_stop && any_success)) {
    for (int i = 0; i < cfg.n_iter; ++i) {
      // Parameters change once checkpoint i has been completed, so each
      // setting (k0 and eta0 included) is used for m steps.
      if (is_checkpoint[static_cast<std::size_t>(i)]) {
        const double k_new = sparsity_update(x_best, tm.anchor(), cfg.sparsity_divisor);
        const StepSizeUpdate upd = step_size_update(eta, k_new, k, eps, cfg);
        eta = upd.eta;
        k = k_new;
        if (upd.restart_from_best) {
          x_cur = x_best;
          grad_cur = grad_best;
        }
      }

      const Eigen::Index t = support_size(k, d);
      Vector direction = sparse_sign_step(grad_cur, t);
      if ((direction.array() == 0.0).all()) {
        direction = random_sign_direction(d, t, rng);
        ++result.zero_grad_steps;
      }
      const Vector x_next = project(x_cur + eta * direction);
      if (observer) observer(iter_offset + i + 1, x_next, eps);

      const bool last = i + 1 == cfg.n_iter;
      ev = objective.evaluate(x_next, !last);
      if (last) ++result.forward_evals;
      else ++result.gradient_evals;

      x_cur = x_next;
      grad_cur = ev.grad;
      if (ev.value > loss_best) {
        loss_best = ev.value;
        x_best = x_next;
        grad_best = ev.grad;
        best_success = ev.success;
      }
      if (ev.success) {
        any_success = true;
        x_success = x_next;
      }
      result.loss_trace.push_back(loss_best);
      result.success_trace.push_back(any_success);
      done = i + 1;
      if (cfg.early_stop && ev.success) break;
    }
  }

  result.x_adv = (any_success && !best_success) ? x_success : x_best;
  result.loss_best = loss_best;
  result.success = any_success;
  result.iterations_used = done;
  result.l1_norm = (result.x_adv - tm.anchor()).lpNorm<1>();
  return result;
}

}  // namespace

AttackResult apgd_single(const Objective& objective, const ThreatModel& tm, const ApgdConfig& cfg,
                         const Vector& x_init, Rng& rng, const IterateObserver& observer) {
  cfg.validate();
  return apgd_single_impl(objective, tm, cfg, x_init, rng, observer, 0);
}

AttackResult apgd_multi(const Objective& objective, const Vector& x, double eps,
                        const ApgdConfig& cfg, Rng& rng, const std::optional<Vector>& x_init,
                        const IterateObserver& observer) {
  cfg.validate();
  if (cfg.phases.empty()) throw ParameterError("apgd_multi: cfg.phases is empty");

  // floor(fraction * N) for all but the last phase, which takes the remainder.
  std::vector<int> lengths;
  int assigned = 0;
  for (std::size_t j = 0; j + 1 < cfg.phases.size(); ++j) {
    const int len = static_cast<int>(std::floor(cfg.phases[j].fraction * cfg.n_iter + 1e-9));
    lengths.push_back(len);
    assigned += len;
  }
  lengths.push_back(cfg.n_iter - assigned);

  Vector start = x_init ? *x_init : x;
  AttackResult merged;
  int offset = 0;
  for (std::size_t j = 0; j < cfg.phases.size(); ++j) {
    const bool final_phase = j + 1 == cfg.phases.size();
    const int len = lengths[j];
    if (len <= 0) continue;
    const ThreatModel tm(x, eps * cfg.phases[j].radius_multiplier);
    ApgdConfig phase_cfg = cfg;
    phase_cfg.phases.clear();
    phase_cfg.n_iter = len;
    phase_cfg.early_stop = cfg.early_stop && final_phase;
    const Vector phase_init = project_box_l1(start, tm);
    AttackResult r = apgd_single_impl(objective, tm, phase_cfg, phase_init, rng, observer, offset);
    offset += len;

    merged.gradient_evals += r.gradient_evals;
    merged.forward_evals += r.forward_evals;
    merged.zero_grad_steps += r.zero_grad_steps;
    merged.iterations_used += r.iterations_used;
    merged.loss_trace.insert(merged.loss_trace.end(), r.loss_trace.begin(), r.loss_trace.end());
    if (final_phase) {
      merged.success_trace.insert(merged.success_trace.end(), r.success_trace.begin(),
                                  r.success_trace.end());
      merged.x_adv = r.x_adv;
      merged.loss_best = r.loss_best;
      merged.success = r.success;
      merged.l1_norm = r.l1_norm;
    } else {
      merged.success_trace.insert(merged.success_trace.end(), r.success_trace.size(), false);
    }
    start = r.x_adv;
  }
  return merged;
}

AttackResult apgd_run(const Objective& objective, const Vector& x, double eps, const ApgdConfig& cfg,
                      Rng& rng, const std::optional<Vector>& x_init, const IterateObserver& observer) {
  if (!cfg.phases.empty()) return apgd_multi(objective, x, eps, cfg, rng, x_init, observer);
  const ThreatModel tm(x, eps);
  return apgd_single(objective, tm, cfg, x_init ? project_box_l1(*x_init, tm) : x, rng, observer);
}

int restart_target(const Vector& clean_logits, int label, int restart) {
  const auto k = static_cast<int>(clean_logits.size());
  if (k < 2) throw ParameterError("restart_target: need at least 2 classes");
  std::vector<int> order;
  for (int c = 0; c < k; ++c)
    if (c != label) order.push_back(c);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return clean_logits[a] > clean_logits[b]; });
  return order[static_cast<std::size_t>(restart % (k - 1))];
}

AttackResult apgd_restarts(const LogitsOracle& model, LossKind kind, const Vector& x, int y,
                           double eps, const ApgdConfig& cfg, int n_restarts, Rng& rng,
                           const std::optional<Vector>& clean_logits,
                           const IterateObserver& observer) {
  if (n_restarts < 1) throw ParameterError("apgd_restarts: n_restarts must be >= 1");
  int forwards = 0;
  Vector clean;
  if (kind == LossKind::DlrTargeted) {
    if (clean_logits) {
      clean = *clean_logits;
    } else {
      clean = model.logits(x);
      ++forwards;
    }
  }
  const ThreatModel tm(x, eps);

  AttackResult best;
  bool have_best = false;
  int gradients = 0, iterations = 0, zero_steps = 0;
  for (int r = 0; r < n_restarts; ++r) {
    std::optional<int> target;
    if (kind == LossKind::DlrTargeted) target = restart_target(clean, y, r);
    const ClassifierObjective objective(model, kind, y, target);
    const std::optional<Vector> init =
        r == 0 ? std::optional<Vector>(x) : std::optional<Vector>(oracles::sample_feasible(tm, rng));
    AttackResult run = apgd_run(objective, x, eps, cfg, rng, init, observer);
    gradients += run.gradient_evals;
    forwards += run.forward_evals;
    iterations += run.iterations_used;
    zero_steps += run.zero_grad_steps;

    const bool better = !have_best || (run.success && !best.success) ||
                        (run.success == best.success && run.loss_best > best.loss_best);
    if (better) {
      best = std::move(run);
      have_best = true;
    }
    if (cfg.early_stop && best.success) break;
  }
  best.gradient_evals = gradients;
  best.forward_evals = forwards;
  best.iterations_used = iterations;
  best.zero_grad_steps = zero_steps;
  return best;
}

}  // namespace l1box
