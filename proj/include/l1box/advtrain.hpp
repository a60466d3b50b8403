#ifndef L1BOX_ADVTRAIN_HPP
#define L1BOX_ADVTRAIN_HPP

#include "l1box/apgd.hpp"
#include "l1box/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace l1box {

struct AtConfig {
  double eps_train = 12.0;
  int inner_steps = 10;
  double k0 = 0.05;
  int epochs = 20;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  /// Single-eps APGD used as the inner maximizer.
  ApgdConfig inner_config() const;
};

struct TrainingTrajectory {
  /// Parameters before training (index 0) and after every epoch.
  std::vector<Vector> snapshots;
  /// Mean inner-attack cross-entropy over each epoch.
  std::vector<double> inner_loss;
};

/// Minibatch SGD on the cross-entropy at inner-attack points. Every example
/// of a batch is attacked from x with its own derived seed; the shuffle
/// stream equals the one train_plain draws from Rng(cfg.seed), so
/// eps_train = 0 reproduces plain training exactly.
TrainingTrajectory adv_train(DifferentiableClassifier& model, const LabeledDataset& data,
                             const AtConfig& cfg);

enum class InnerAttack { Apgd, Slide };

/// Mean cross-entropy reached by a 10-step inner attack (APGD with k0 from
/// cfg, or SLIDE with k = 0.01) on every example of data.
double inner_attack_mean_loss(const LogitsOracle& model, const LabeledDataset& data,
                              const AtConfig& cfg, InnerAttack attack, int threads = 1);

struct ProbeRow {
  int epoch = 0;
  std::string split;
  std::string attack;
  double robust_accuracy = 0.0;
};

/// Robust accuracy of every probe_every-th snapshot on both splits under
/// the training attack and under the stronger of it and 100-iteration
/// multi-eps APGD (pointwise worst case, so the second curve never exceeds
/// the first).
std::vector<ProbeRow> overfitting_probe(const DifferentiableClassifier& model,
                                        const TrainingTrajectory& trajectory,
                                        const LabeledDataset& train, const LabeledDataset& test,
                                        double eps, int probe_every, const AtConfig& cfg,
                                        int threads = 1);

}  // namespace l1box

#endif  // L1BOX_ADVTRAIN_HPP
