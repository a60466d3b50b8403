#include "l1box/advtrain.hpp"

#include "l1box/ensemble.hpp"

#include <numeric>

namespace l1box {

void AtConfig::validate() const {
  if (!(eps_train >= 0.0) || !std::isfinite(eps_train))
    throw ParameterError("AtConfig: eps_train must be finite and >= 0");
  if (inner_steps < 1) throw ParameterError("AtConfig: inner_steps must be >= 1");
  if (!(k0 > 0.0 && k0 <= 1.0)) throw ParameterError("AtConfig: k0 must lie in (0, 1]");
  if (epochs < 0) throw ParameterError("AtConfig: epochs must be >= 0");
  if (batch_size < 1) throw ParameterError("AtConfig: batch_size must be >= 1");
}

ApgdConfig AtConfig::inner_config() const {
  ApgdConfig inner = ApgdConfig::single_eps(inner_steps);
  inner.k0 = k0;
  return inner;
}

namespace {

Vector inner_point(const LogitsOracle& model, const Vector& x, int y, const AtConfig& cfg,
                   std::uint64_t seed) {
  if (cfg.eps_train == 0.0) return x;
  const ClassifierObjective objective(model, LossKind::CrossEntropy, y);
  Rng rng(seed);
  const AttackResult r =
      apgd_single(objective, ThreatModel(x, cfg.eps_train), cfg.inner_config(), x, rng);
  if (!ThreatModel(x, cfg.eps_train).contains(r.x_adv))
    throw InvariantError("adv_train: inner attack left the threat set");
  return r.x_adv;
}

}  // namespace

TrainingTrajectory adv_train(DifferentiableClassifier& model, const LabeledDataset& data,
                             const AtConfig& cfg) {
  cfg.validate();
  data.validate(model.num_classes());
  Rng rng(cfg.seed);
  TrainingTrajectory trajectory;
  trajectory.snapshots.push_back(model.parameters());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<Vector> xs;
      std::vector<int> ys;
      for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_size); ++j) {
        const std::size_t i = order[j];
        const std::uint64_t seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, i);
        xs.push_back(inner_point(model, data.inputs[i], data.labels[i], cfg, seed));
        ys.push_back(data.labels[i]);
        loss_sum += cross_entropy(model.logits(xs.back()), ys.back());
      }
      sgd_step(model, xs, ys, cfg.lr);
    }
    trajectory.inner_loss.push_back(data.size() ? loss_sum / static_cast<double>(data.size()) : 0.0);
    trajectory.snapshots.push_back(model.parameters());
  }
  return trajectory;
}

double inner_attack_mean_loss(const LogitsOracle& model, const LabeledDataset& data,
                              const AtConfig& cfg, InnerAttack attack, int threads) {
  cfg.validate();
  data.validate(model.num_classes());
  if (data.size() == 0) throw ParameterError("inner_attack_mean_loss: empty dataset");
  std::vector<double> losses(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    Rng rng(mix_seed(cfg.seed, i, 0x51de));
    if (attack == InnerAttack::Apgd) {
      const ClassifierObjective objective(model, LossKind::CrossEntropy, data.labels[i]);
      losses[i] = apgd_single(objective, ThreatModel(data.inputs[i], cfg.eps_train),
                              cfg.inner_config(), data.inputs[i], rng)
                      .loss_best;
    } else {
      SlideConfig slide;
      slide.n_iter = cfg.inner_steps;
      losses[i] = slide_attack(model, data.inputs[i], data.labels[i], cfg.eps_train, slide, rng).loss_best;
    }
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

std::vector<ProbeRow> overfitting_probe(const DifferentiableClassifier& model,
                                        const TrainingTrajectory& trajectory,
                                        const LabeledDataset& train, const LabeledDataset& test,
                                        double eps, int probe_every, const AtConfig& cfg,
                                        int threads) {
  cfg.validate();
  if (probe_every < 1) throw ParameterError("overfitting_probe: probe_every must be >= 1");
  if (trajectory.snapshots.empty()) throw ParameterError("overfitting_probe: no snapshots");

  std::vector<ProbeRow> rows;
  const auto last = static_cast<int>(trajectory.snapshots.size()) - 1;
  for (int epoch = 0; epoch <= last; ++epoch) {
    if (epoch % probe_every != 0 && epoch != last) continue;
    auto snapshot = model.clone();
    snapshot->set_parameters(trajectory.snapshots[static_cast<std::size_t>(epoch)]);
    const LogitsOracle& m = *snapshot;

    const ExampleAttack training_attack = [&](const Vector& x, int y, std::size_t id) {
      Rng rng(mix_seed(cfg.seed, id, 0xa11));
      const ClassifierObjective objective(m, LossKind::CrossEntropy, y);
      return apgd_single(objective, ThreatModel(x, eps), cfg.inner_config(), x, rng);
    };
    const ExampleAttack strong_attack = [&](const Vector& x, int y, std::size_t id) {
      Rng rng(mix_seed(cfg.seed, id, 0xa12));
      const ClassifierObjective objective(m, LossKind::CrossEntropy, y);
      ApgdConfig strong = ApgdConfig::multi_eps(100);
      strong.early_stop = true;
      return apgd_multi(objective, x, eps, strong, rng);
    };

    for (const auto& [split, data] : {std::pair<const char*, const LabeledDataset*>{"train", &train},
                                      std::pair<const char*, const LabeledDataset*>{"test", &test}}) {
      if (data->size() == 0) continue;
      const EvalReport weak = evaluate_attack(m, *data, training_attack, threads);
      const EvalReport strong = worst_case_merge({weak, evaluate_attack(m, *data, strong_attack, threads)});
      rows.push_back({epoch, split, "train-attack", weak.robust_accuracy});
      rows.push_back({epoch, split, "apgd-multi-100", strong.robust_accuracy});
    }
  }
  return rows;
}

}  // namespace l1box
