#ifndef L1BOX_ENSEMBLE_HPP
#define L1BOX_ENSEMBLE_HPP

#include "l1box/apgd.hpp"
#include "l1box/models.hpp"
#include "l1box/square.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace l1box {

/// Fixed-sparsity l1 PGD with top-k sign steps.
struct SlideConfig {
  double k = 0.01;
  /// Absolute step; unset means 2 * eps / (2000 / 255), i.e. 3.06 at eps = 12.
  std::optional<double> eta;
  int n_iter = 100;
  bool exact_projection = false;

  double step_for(double eps) const;
  void validate() const;
};

/// Cross-entropy ascent u = x + eta * s(grad, ceil(k d)) followed by the
/// exact or approximate projection. Returns the best-loss iterate and, like
/// APGD, spends n_iter gradient and one forward evaluation.
AttackResult slide_attack(const Objective& objective, const Vector& x, double eps,
                          const SlideConfig& cfg, Rng& rng, const IterateObserver& observer = {});
AttackResult slide_attack(const LogitsOracle& model, const Vector& x, int y, double eps,
                          const SlideConfig& cfg, Rng& rng, const IterateObserver& observer = {});

enum class Stage { None, Clean, ApgdCe, ApgdTdlr, Square, Attack };

std::string to_string(Stage stage);

struct EnsembleConfig {
  int ce_restarts = 5;
  int ce_iters = 100;
  int tdlr_restarts = 5;
  int tdlr_iters = 100;
  int square_queries = 5000;
  double square_p_init = 0.8;
  bool include_square = true;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct StageBudget {
  int gradient_evals = 0;
  int forward_evals = 0;
};

struct ExampleReport {
  std::size_t example_id = 0;
  bool clean_correct = false;
  bool robust = false;
  Stage stage_broken = Stage::None;
  /// Cross-entropy at the reported point: the breaking point, or the
  /// highest-loss stage output for robust examples.
  double best_loss = 0.0;
  double l1_norm = 0.0;
  /// Indexed by ApgdCe, ApgdTdlr, Square (Stage value minus 2).
  std::array<StageBudget, 3> budget{};
};

struct EvalReport {
  std::vector<ExampleReport> per_example;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

/// Fraction of robust examples. Throws ParameterError on an empty report.
double robust_accuracy(const EvalReport& report);

/// Recomputes both accuracies from per_example.
void finalize(EvalReport& report);

/// Guess a square HWC layout: 3 channels if d / 3 is a square, else one
/// channel if d is a square, else a single pixel with d channels.
ImageShape infer_image_shape(Eigen::Index d);

/// Seed of one (example, stage) attack run.
std::uint64_t stage_seed(std::uint64_t seed, std::size_t example_id, Stage stage);

/// APGD-CE with restarts and early stop, then APGD-T-DLR (skipped for fewer
/// than 4 classes), then Square, each only while the example is unbroken.
ExampleReport autoattack_example(const LogitsOracle& model, const Vector& x, int y,
                                 std::size_t example_id, double eps, const ImageShape& shape,
                                 const EnsembleConfig& cfg);
EvalReport autoattack(const LogitsOracle& model, const LabeledDataset& data, double eps,
                      const EnsembleConfig& cfg);

/// One ensemble stage on its own, with the seeds the ensemble would use.
EvalReport evaluate_component(const LogitsOracle& model, const LabeledDataset& data, double eps,
                              const EnsembleConfig& cfg, Stage stage);

/// Runs attack(x, y, example_id) on every correctly classified example.
using ExampleAttack = std::function<AttackResult(const Vector&, int, std::size_t)>;
EvalReport evaluate_attack(const LogitsOracle& model, const LabeledDataset& data,
                           const ExampleAttack& attack, int threads);

/// An example is robust iff it is robust in every report. Throws
/// ParameterError unless all reports cover the same example ids.
EvalReport worst_case_merge(const std::vector<EvalReport>& reports);

}  // namespace l1box

#endif  // L1BOX_ENSEMBLE_HPP
