#ifndef L1BOX_APGD_HPP
#define L1BOX_APGD_HPP

#include "l1box/core.hpp"
#include "l1box/models.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace l1box {

/// Value, optional input gradient and attack-success flag at one point.
struct Evaluation {
  double value = 0.0;
  Vector grad;
  bool success = false;
};

/// Scalar function maximized by the first-order attacks.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Evaluation evaluate(const Vector& x, bool with_grad) const = 0;
};

/// Loss of a classifier at a fixed label; success means misclassified.
class ClassifierObjective final : public Objective {
 public:
  ClassifierObjective(const LogitsOracle& model, LossKind kind, int label,
                      std::optional<int> target = std::nullopt);
  Eigen::Index dim() const override { return model_.input_dim(); }
  Evaluation evaluate(const Vector& x, bool with_grad) const override;

 private:
  const LogitsOracle& model_;
  LossKind kind_;
  int label_;
  std::optional<int> target_;
};

struct ApgdPhase {
  double fraction;
  double radius_multiplier;
};

struct ApgdConfig {
  int n_iter = 100;
  double k0 = 0.2;
  double checkpoint_fraction = 0.04;
  double sparsity_divisor = 1.5;
  double step_decay = 1.5;
  double rho = 0.95;
  double eta_min_divisor = 10.0;
  /// Radius schedule of the multi-eps variant; empty runs a single phase.
  std::vector<ApgdPhase> phases;
  bool early_stop = false;
  /// false swaps the exact projection for clip-after-l1-projection.
  bool exact_projection = true;

  static ApgdConfig single_eps(int n_iter);
  /// 30% / 30% / 40% of the budget at radii 3 eps, 2 eps, eps.
  static ApgdConfig multi_eps(int n_iter);
  void validate() const;
};

struct AttackResult {
  Vector x_adv;
  double loss_best = 0.0;
  bool success = false;
  int iterations_used = 0;
  double l1_norm = 0.0;
  /// Running best loss after each iteration (or accepted margin per query
  /// for the Square attack).
  std::vector<double> loss_trace;
  /// Whether a successful point had been found by each iteration.
  std::vector<bool> success_trace;
  int gradient_evals = 0;
  int forward_evals = 0;
  int zero_grad_steps = 0;
};

/// Called with (global iteration index, iterate, radius of its phase).
using IterateObserver = std::function<void(int, const Vector&, double)>;

/// Iterations at which sparsity and step size are recomputed:
/// multiples of m = ceil(fraction * n_iter) in [1, n_iter].
std::vector<int> checkpoints(int n_iter, double fraction);

/// ||x_best - x||_0 / (divisor * d), floored at 1/d.
double sparsity_update(const Vector& x_best, const Vector& x, double divisor);

struct StepSizeUpdate {
  double eta;
  bool restart_from_best;
};

/// Geometric decay while the sparsity ratio stays above rho, reset to eps
/// (and restart from the best point) otherwise.
StepSizeUpdate step_size_update(double eta_prev, double k_new, double k_old, double eps,
                                const ApgdConfig& cfg);

/// h / t for a sign vector h on t distinct random coordinates; the fallback
/// direction when the gradient vanishes.
Vector random_sign_direction(Eigen::Index d, Eigen::Index t, Rng& rng);

/// Number of coordinates touched by an update of sparsity fraction k.
Eigen::Index support_size(double k, Eigen::Index d);

AttackResult apgd_single(const Objective& objective, const ThreatModel& tm, const ApgdConfig& cfg,
                         const Vector& x_init, Rng& rng, const IterateObserver& observer = {});

/// Runs the radius schedule in cfg.phases; only the last phase's iterates
/// (radius eps) count towards the returned point, loss and success.
AttackResult apgd_multi(const Objective& objective, const Vector& x, double eps,
                        const ApgdConfig& cfg, Rng& rng,
                        const std::optional<Vector>& x_init = std::nullopt,
                        const IterateObserver& observer = {});

/// Single- or multi-eps depending on cfg.phases.
AttackResult apgd_run(const Objective& objective, const Vector& x, double eps,
                      const ApgdConfig& cfg, Rng& rng,
                      const std::optional<Vector>& x_init = std::nullopt,
                      const IterateObserver& observer = {});

/// Target class of restart r for the targeted loss: the (r+1)-th most likely
/// class other than the label (the (r+2)-th overall for a correctly
/// classified point), cycling after K-1 restarts.
int restart_target(const Vector& clean_logits, int label, int restart);

/// First run starts at x, the others at sample_feasible points. Returns a
/// successful run if any, otherwise the run with the highest loss. The
/// targeted loss ranks classes by clean_logits, computed (and counted as one
/// forward evaluation) when not supplied. The observer sees every run, with
/// iteration indices starting again at 0 for each restart.
AttackResult apgd_restarts(const LogitsOracle& model, LossKind kind, const Vector& x, int y,
                           double eps, const ApgdConfig& cfg, int n_restarts, Rng& rng,
                           const std::optional<Vector>& clean_logits = std::nullopt,
                           const IterateObserver& observer = {});

}  // namespace l1box

#endif  // L1BOX_APGD_HPP
