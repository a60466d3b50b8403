#include "l1box/ensemble.hpp"

#include "l1box/geometry.hpp"

#include <cmath>

namespace l1box {

double SlideConfig::step_for(double eps) const {
  return eta ? *eta : 2.0 * eps / (2000.0 / 255.0);
}

void SlideConfig::validate() const {
  if (!(k > 0.0 && k <= 1.0)) throw ParameterError("SlideConfig: k must lie in (0, 1]");
  if (n_iter < 1) throw ParameterError("SlideConfig: n_iter must be >= 1");
  if (eta && !(*eta >= 0.0 && std::isfinite(*eta)))
    throw ParameterError("SlideConfig: eta must be finite and >= 0");
}

AttackResult slide_attack(const Objective& objective, const Vector& x, double eps,
                          const SlideConfig& cfg, Rng& rng, const IterateObserver& observer) {
  cfg.validate();
  const ThreatModel tm(x, eps);
  const Eigen::Index d = tm.dim();
  if (objective.dim() != d) throw DimensionError("slide_attack: objective dimension mismatch");
  const double eta = cfg.step_for(eps);
  const Eigen::Index t = support_size(cfg.k, d);
  auto project = [&](const Vector& u) {
    return cfg.exact_projection ? project_box_l1(u, tm) : approx_project(u, tm);
  };

  AttackResult result;
  Evaluation ev = objective.evaluate(x, true);
  ++result.gradient_evals;
  Vector x_cur = x, grad_cur = ev.grad, x_best = x, x_success = x;
  double loss_best = ev.value;
  bool best_success = ev.success, any_success = ev.success;

  for (int i = 0; i < cfg.n_iter; ++i) {
    Vector direction = sparse_sign_step(grad_cur, t);
    if ((direction.array() == 0.0).all()) {
      direction = random_sign_direction(d, t, rng);
      ++result.zero_grad_steps;
    }
    x_cur = project(x_cur + eta * direction);
    if (observer) observer(i + 1, x_cur, eps);
    const bool last = i + 1 == cfg.n_iter;
    ev = objective.evaluate(x_cur, !last);
    if (last) ++result.forward_evals;
    else ++result.gradient_evals;
    grad_cur = ev.grad;
    if (ev.value > loss_best) {
      loss_best = ev.value;
      x_best = x_cur;
      best_success = ev.success;
    }
    if (ev.success) {
      any_success = true;
      x_success = x_cur;
    }
    result.loss_trace.push_back(loss_best);
    result.success_trace.push_back(any_success);
  }

  result.x_adv = (any_success && !best_success) ? x_success : x_best;
  result.loss_best = loss_best;
  result.success = any_success;
  result.iterations_used = cfg.n_iter;
  result.l1_norm = (result.x_adv - x).lpNorm<1>();
  return result;
}

AttackResult slide_attack(const LogitsOracle& model, const Vector& x, int y, double eps,
                          const SlideConfig& cfg, Rng& rng, const IterateObserver& observer) {
  const ClassifierObjective objective(model, LossKind::CrossEntropy, y);
  return slide_attack(objective, x, eps, cfg, rng, observer);
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::None: return "none";
    case Stage::Clean: return "clean";
    case Stage::ApgdCe: return "apgd-ce";
    case Stage::ApgdTdlr: return "apgd-t-dlr";
    case Stage::Square: return "square";
    case Stage::Attack: return "attack";
  }
  return "unknown";
}

void EnsembleConfig::validate() const {
  if (ce_restarts < 1 || ce_iters < 1 || tdlr_restarts < 1 || tdlr_iters < 1 || square_queries < 1)
    throw ParameterError("EnsembleConfig: budgets must be positive");
  if (!(square_p_init > 0.0 && square_p_init <= 1.0))
    throw ParameterError("EnsembleConfig: square_p_init must lie in (0, 1]");
}

double robust_accuracy(const EvalReport& report) {
  if (report.per_example.empty()) throw ParameterError("robust_accuracy: empty report");
  std::size_t robust = 0;
  for (const auto& e : report.per_example) robust += e.robust ? 1 : 0;
  return static_cast<double>(robust) / static_cast<double>(report.per_example.size());
}

void finalize(EvalReport& report) {
  report.robust_accuracy = robust_accuracy(report);
  std::size_t clean = 0;
  for (const auto& e : report.per_example) clean += e.clean_correct ? 1 : 0;
  report.clean_accuracy = static_cast<double>(clean) / static_cast<double>(report.per_example.size());
}

ImageShape infer_image_shape(Eigen::Index d) {
  auto square_side = [](Eigen::Index n) -> Eigen::Index {
    const auto r = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? r : 0;
  };
  if (d % 3 == 0)
    if (const Eigen::Index h = square_side(d / 3)) return {h, 3};
  if (const Eigen::Index h = square_side(d)) return {h, 1};
  return {1, d};
}

std::uint64_t stage_seed(std::uint64_t seed, std::size_t example_id, Stage stage) {
  return mix_seed(seed, example_id, static_cast<std::uint64_t>(stage));
}

namespace {

struct StageOutcome {
  bool ran = false;
  AttackResult result;
};

StageOutcome run_stage(const LogitsOracle& model, const Vector& x, int y, std::size_t id,
                       double eps, const ImageShape& shape, const EnsembleConfig& cfg, Stage stage,
                       const Vector& clean) {
  Rng rng(stage_seed(cfg.seed, id, stage));
  StageOutcome out;
  switch (stage) {
    case Stage::ApgdCe: {
      ApgdConfig apgd = ApgdConfig::multi_eps(cfg.ce_iters);
      apgd.early_stop = true;
      out.result = apgd_restarts(model, LossKind::CrossEntropy, x, y, eps, apgd, cfg.ce_restarts, rng, clean);
      out.ran = true;
      break;
    }
    case Stage::ApgdTdlr: {
      if (model.num_classes() < 4) break;
      ApgdConfig apgd = ApgdConfig::multi_eps(cfg.tdlr_iters);
      apgd.early_stop = true;
      out.result = apgd_restarts(model, LossKind::DlrTargeted, x, y, eps, apgd, cfg.tdlr_restarts, rng, clean);
      out.ran = true;
      break;
    }
    case Stage::Square: {
      SquareConfig sq;
      sq.n_queries = cfg.square_queries;
      sq.p_init = cfg.square_p_init;
      sq.seed = stage_seed(cfg.seed, id, stage);
      out.result = square_attack(model, x, shape, y, eps, sq, rng);
      out.ran = true;
      break;
    }
    default:
      throw ParameterError("run_stage: not an ensemble stage");
  }
  return out;
}

ExampleReport clean_report(const LogitsOracle& model, const Vector& x, int y, std::size_t id,
                           Vector& clean) {
  clean = model.logits(x);
  ExampleReport report;
  report.example_id = id;
  report.clean_correct = is_correct(clean, y);
  report.robust = report.clean_correct;
  report.best_loss = cross_entropy(clean, y);
  if (!report.clean_correct) report.stage_broken = Stage::Clean;
  return report;
}

void record_stage(ExampleReport& report, const LogitsOracle& model, int y, Stage stage,
                  const AttackResult& r) {
  auto& budget = report.budget[static_cast<std::size_t>(stage) - static_cast<std::size_t>(Stage::ApgdCe)];
  budget.gradient_evals += r.gradient_evals;
  budget.forward_evals += r.forward_evals;
  const double ce = cross_entropy(model.logits(r.x_adv), y);
  if (r.success) {
    report.robust = false;
    report.stage_broken = stage;
    report.best_loss = ce;
    report.l1_norm = r.l1_norm;
  } else if (ce > report.best_loss) {
    report.best_loss = ce;
    report.l1_norm = r.l1_norm;
  }
}

std::size_t checked_size(const LabeledDataset& data, const LogitsOracle& model) {
  data.validate(model.num_classes());
  if (data.size() == 0) throw ParameterError("evaluation: empty dataset");
  if (data.dim() != model.input_dim()) throw DimensionError("evaluation: dataset/model dimension mismatch");
  return data.size();
}

}  // namespace

ExampleReport autoattack_example(const LogitsOracle& model, const Vector& x, int y,
                                 std::size_t example_id, double eps, const ImageShape& shape,
                                 const EnsembleConfig& cfg) {
  cfg.validate();
  Vector clean;
  ExampleReport report = clean_report(model, x, y, example_id, clean);
  std::vector<Stage> stages = {Stage::ApgdCe, Stage::ApgdTdlr};
  if (cfg.include_square) stages.push_back(Stage::Square);
  for (Stage stage : stages) {
    if (!report.robust) break;
    const StageOutcome out = run_stage(model, x, y, example_id, eps, shape, cfg, stage, clean);
    if (out.ran) record_stage(report, model, y, stage, out.result);
  }
  return report;
}

EvalReport autoattack(const LogitsOracle& model, const LabeledDataset& data, double eps,
                      const EnsembleConfig& cfg) {
  cfg.validate();
  const std::size_t n = checked_size(data, model);
  const ImageShape shape = data.image_shape ? ImageShape{(*data.image_shape)[0], (*data.image_shape)[2]}
                                            : infer_image_shape(data.dim());
  EvalReport report;
  report.per_example.resize(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    report.per_example[i] = autoattack_example(model, data.inputs[i], data.labels[i], i, eps, shape, cfg);
  });
  finalize(report);
  return report;
}

EvalReport evaluate_component(const LogitsOracle& model, const LabeledDataset& data, double eps,
                              const EnsembleConfig& cfg, Stage stage) {
  cfg.validate();
  if (stage != Stage::ApgdCe && stage != Stage::ApgdTdlr && stage != Stage::Square)
    throw ParameterError("evaluate_component: not an ensemble stage");
  const std::size_t n = checked_size(data, model);
  const ImageShape shape = data.image_shape ? ImageShape{(*data.image_shape)[0], (*data.image_shape)[2]}
                                            : infer_image_shape(data.dim());
  EvalReport report;
  report.per_example.resize(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    Vector clean;
    ExampleReport r = clean_report(model, data.inputs[i], data.labels[i], i, clean);
    if (r.robust) {
      const StageOutcome out = run_stage(model, data.inputs[i], data.labels[i], i, eps, shape, cfg, stage, clean);
      if (out.ran) record_stage(r, model, data.labels[i], stage, out.result);
    }
    report.per_example[i] = r;
  });
  finalize(report);
  return report;
}

EvalReport evaluate_attack(const LogitsOracle& model, const LabeledDataset& data,
                           const ExampleAttack& attack, int threads) {
  const std::size_t n = checked_size(data, model);
  EvalReport report;
  report.per_example.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Vector clean;
    const int y = data.labels[i];
    ExampleReport r = clean_report(model, data.inputs[i], y, i, clean);
    if (r.robust) {
      const AttackResult a = attack(data.inputs[i], y, i);
      const double ce = cross_entropy(model.logits(a.x_adv), y);
      r.robust = !a.success;
      if (a.success) r.stage_broken = Stage::Attack;
      if (a.success || ce > r.best_loss) {
        r.best_loss = ce;
        r.l1_norm = a.l1_norm;
      }
    }
    report.per_example[i] = r;
  });
  finalize(report);
  return report;
}

EvalReport worst_case_merge(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ParameterError("worst_case_merge: no reports");
  EvalReport merged = reports.front();
  for (std::size_t r = 1; r < reports.size(); ++r) {
    const auto& other = reports[r].per_example;
    if (other.size() != merged.per_example.size())
      throw ParameterError("worst_case_merge: reports cover different example sets");
    for (std::size_t i = 0; i < other.size(); ++i) {
      ExampleReport& m = merged.per_example[i];
      const ExampleReport& o = other[i];
      if (m.example_id != o.example_id)
        throw ParameterError("worst_case_merge: reports cover different example sets");
      m.clean_correct = m.clean_correct && o.clean_correct;
      if (m.robust && !o.robust) {
        m.stage_broken = o.stage_broken;
        m.best_loss = o.best_loss;
        m.l1_norm = o.l1_norm;
      } else if (m.robust == o.robust && o.best_loss > m.best_loss) {
        m.best_loss = o.best_loss;
        m.l1_norm = o.l1_norm;
      }
      m.robust = m.robust && o.robust;
      for (std::size_t s = 0; s < m.budget.size(); ++s) {
        m.budget[s].gradient_evals += o.budget[s].gradient_evals;
        m.budget[s].forward_evals += o.budget[s].forward_evals;
      }
    }
  }
  finalize(merged);
  return merged;
}

}  // namespace l1box
