// Command-line driver: attack, eval, train, verify, sparsity, bench.
//
// Exit codes: 0 success, 1 configuration or parameter error, 2 I/O error,
// 3 invariant violation (infeasible iterate, failed oracle check, model
// round-trip mismatch).

#include "l1box/advtrain.hpp"
#include "l1box/apgd.hpp"
#include "l1box/ensemble.hpp"
#include "l1box/geometry.hpp"
#include "l1box/io.hpp"
#include "l1box/models.hpp"
#include "l1box/oracles.hpp"
#include "l1box/sparsity.hpp"
#include "l1box/square.hpp"
#include "l1box/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace l1box;

namespace {

// Every key a config file may contain, by section.
const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"run", {"seed", "threads", "out"}},
    {"data", {"path", "n", "synth", "dim", "classes", "margin", "spread", "seed"}},
    {"model", {"path", "kind", "hidden", "epochs", "lr", "batch_size", "train_n", "seed"}},
    {"attack", {"kind", "eps", "iters", "restarts", "queries", "p_init"}},
    {"eval", {"eps", "ce_restarts", "ce_iters", "tdlr_restarts", "tdlr_iters", "queries", "p_init",
              "include_square", "columns", "slide_iters"}},
    {"train", {"eps", "inner_steps", "k0", "epochs", "lr", "batch_size", "probe_every", "probe_eps",
               "test_fraction"}},
    {"verify", {"suites", "instances", "steepest_instances", "steepest_samples", "mc_samples",
                "gradient_points", "tolerance", "inject_bug"}},
    {"sparsity", {"eps", "d", "mc_samples"}},
    {"bench", {"d", "eps", "repeats"}},
};

// Flag values; each overrides the matching config keys of the command.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> eps;
  std::optional<int> iters;
  std::optional<int> queries;
  std::optional<int> restarts;
  std::optional<std::string> out;
  std::optional<int> threads;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) items.push_back(item.substr(b, e - b + 1));
  }
  return items;
}

// Typed access to the config. Each lookup records the effective value so
// the resolved config can be written next to the outputs.
class Settings {
 public:
  explicit Settings(ConfigFile file) : file_(std::move(file)) { require_known_keys(file_, kKnownKeys); }

  void override_value(const std::string& section, const std::string& key, const std::string& value) {
    file_.set(section, key, value);
  }

  std::string str(const std::string& section, const std::string& key, const std::string& fallback) {
    const std::string* v = file_.find(section, key);
    const std::string value = v ? *v : fallback;
    resolved_.set(section, key, value);
    return value;
  }
  std::optional<std::string> optional_str(const std::string& section, const std::string& key) {
    const std::string* v = file_.find(section, key);
    if (!v) return std::nullopt;
    resolved_.set(section, key, *v);
    return *v;
  }
  double real(const std::string& section, const std::string& key, double fallback) {
    const double value = parse_double(str(section, key, format_double(fallback)), section + "." + key);
    resolved_.set(section, key, format_double(value));
    return value;
  }
  long long integer(const std::string& section, const std::string& key, long long fallback) {
    return parse_int(str(section, key, std::to_string(fallback)), section + "." + key);
  }
  int positive(const std::string& section, const std::string& key, long long fallback) {
    const long long v = integer(section, key, fallback);
    if (v < 1 || v > (1LL << 30)) throw ConfigError(section + "." + key + " must be a positive integer");
    return static_cast<int>(v);
  }
  double non_negative(const std::string& section, const std::string& key, double fallback) {
    const double v = real(section, key, fallback);
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(section + "." + key + " must be finite and >= 0");
    return v;
  }
  bool flag(const std::string& section, const std::string& key, bool fallback) {
    return parse_bool(str(section, key, fallback ? "true" : "false"), section + "." + key);
  }
  std::vector<double> reals(const std::string& section, const std::string& key, const std::string& fallback) {
    std::vector<double> out;
    for (const auto& item : split_list(str(section, key, fallback)))
      out.push_back(parse_double(item, section + "." + key));
    if (out.empty()) throw ConfigError(section + "." + key + " is empty");
    return out;
  }

  void write_resolved(const fs::path& dir, const std::string& command) const {
    std::ofstream out(dir / "config.resolved.ini");
    out << "# l1box_cli " << command << "\n" << to_text(resolved_);
    if (!out) throw IoError("cannot write " + (dir / "config.resolved.ini").string());
  }

 private:
  ConfigFile file_;
  ConfigFile resolved_;
};

struct Run {
  explicit Run(ConfigFile file) : settings(std::move(file)) {}
  Settings settings;
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out;
};

int default_threads() {
  if (const char* env = std::getenv("BXL1_THREADS")) {
    const long long v = parse_int(env, "BXL1_THREADS");
    if (v < 1) throw ConfigError("BXL1_THREADS must be >= 1");
    return static_cast<int>(v);
  }
  return 1;
}

// Flags override the file; --threads falls back to the file, then BXL1_THREADS.
Run open_run(const Flags& flags, const std::string& command) {
  ConfigFile file = flags.config.empty() ? ConfigFile{} : load_config(flags.config);
  Run run(std::move(file));
  Settings& s = run.settings;
  auto set_if = [&](const auto& opt, const std::string& section, std::initializer_list<const char*> keys) {
    if (!opt) return;
    std::ostringstream text;
    if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, double>)
      text << format_double(*opt);
    else
      text << *opt;
    for (const char* key : keys) s.override_value(section, key, text.str());
  };
  set_if(flags.seed, "run", {"seed"});
  set_if(flags.out, "run", {"out"});
  set_if(flags.threads, "run", {"threads"});
  set_if(flags.eps, "attack", {"eps"});
  set_if(flags.eps, "eval", {"eps"});
  set_if(flags.eps, "train", {"eps"});
  set_if(flags.eps, "bench", {"eps"});
  set_if(flags.eps, "sparsity", {"eps"});
  set_if(flags.iters, "attack", {"iters"});
  set_if(flags.iters, "eval", {"ce_iters", "tdlr_iters", "slide_iters"});
  set_if(flags.iters, "train", {"inner_steps"});
  set_if(flags.queries, "attack", {"queries"});
  set_if(flags.queries, "eval", {"queries"});
  set_if(flags.restarts, "attack", {"restarts"});
  set_if(flags.restarts, "eval", {"ce_restarts", "tdlr_restarts"});

  const long long seed = s.integer("run", "seed", 0);
  if (seed < 0) throw ConfigError("run.seed must be >= 0");
  run.seed = static_cast<std::uint64_t>(seed);
  run.threads = s.positive("run", "threads", default_threads());
  run.out = s.str("run", "out", "l1box_out/" + command);
  fs::create_directories(run.out);
  return run;
}

LabeledDataset synthesize(Settings& s, std::size_t n, std::uint64_t seed) {
  const std::string synth = s.str("data", "synth", "toy-cifar");
  const double margin = s.non_negative("data", "margin", 24.0);
  const double spread = s.non_negative("data", "spread", 1.0);
  Rng rng(seed);
  if (synth == "toy-cifar") return make_toy_cifar(n, rng, margin, spread);
  if (synth == "blobs") {
    const int dim = s.positive("data", "dim", 192);
    const int classes = s.positive("data", "classes", 10);
    return make_blobs(dim, n, classes, margin, rng, spread);
  }
  throw ConfigError("data.synth must be toy-cifar or blobs, got '" + synth + "'");
}

LabeledDataset load_data(Settings& s, int default_n) {
  if (const auto path = s.optional_str("data", "path")) return load_dataset(*path);
  const int n = s.positive("data", "n", default_n);
  const long long seed = s.integer("data", "seed", 7);
  return synthesize(s, static_cast<std::size_t>(n), static_cast<std::uint64_t>(seed));
}

int class_count(const LabeledDataset& data) {
  int k = 0;
  for (int y : data.labels) k = std::max(k, y + 1);
  return std::max(k, 2);
}

std::unique_ptr<DifferentiableClassifier> make_model(const std::string& kind, Eigen::Index d, int classes,
                                                     int hidden, Rng& rng) {
  if (kind == "mlp") return std::make_unique<MlpModel>(std::vector<Eigen::Index>{d, hidden, classes}, rng);
  if (kind == "linear") return std::make_unique<LinearSoftmaxModel>(LinearSoftmaxModel::random(d, classes, 0.01, rng));
  throw ConfigError("model.kind must be mlp or linear, got '" + kind + "'");
}

struct Workload {
  LabeledDataset data;
  std::unique_ptr<DifferentiableClassifier> model;
  std::string model_name;
};

// The dataset plus the model at model.path, or else the bundled toy model.
// The bundled model is plain-trained on the first train_n points of one
// synthesizer draw, and the remaining n points are returned as the data, so
// both share the same class centers.
Workload load_workload(Settings& s, int default_n) {
  Workload w;
  if (const auto path = s.optional_str("model", "path")) {
    w.data = load_data(s, default_n);
    w.model = load_model(*path);
    w.model_name = fs::path(*path).stem().string();
    if (w.model->input_dim() != w.data.dim())
      throw DimensionError("model input dimension " + std::to_string(w.model->input_dim()) +
                           " does not match the data (" + std::to_string(w.data.dim()) + ")");
    w.data.validate(w.model->num_classes());
    return w;
  }
  if (s.optional_str("data", "path")) throw ConfigError("model.path is required when data.path is set");
  const int n = s.positive("data", "n", default_n);
  const int train_n = s.positive("model", "train_n", 512);
  const auto data_seed = static_cast<std::uint64_t>(s.integer("data", "seed", 7));
  const LabeledDataset all = synthesize(s, static_cast<std::size_t>(train_n + n), data_seed);
  const LabeledDataset train = all.subset(0, static_cast<std::size_t>(train_n));
  w.data = all.subset(static_cast<std::size_t>(train_n), all.size());

  const auto seed = static_cast<std::uint64_t>(s.integer("model", "seed", 8));
  Rng init(mix_seed(seed, 1));
  w.model = make_model(s.str("model", "kind", "mlp"), train.dim(), class_count(all),
                       s.positive("model", "hidden", 32), init);
  SgdConfig sgd;
  sgd.epochs = s.positive("model", "epochs", 20);
  sgd.lr = s.non_negative("model", "lr", 0.1);
  sgd.batch_size = static_cast<std::size_t>(s.positive("model", "batch_size", 32));
  Rng shuffle(mix_seed(seed, 2));
  train_plain(*w.model, train, sgd, shuffle);
  w.model_name = "bundled-" + w.model->kind();
  return w;
}

ImageShape shape_of(const LabeledDataset& data) {
  if (data.image_shape) return ImageShape{(*data.image_shape)[0], (*data.image_shape)[2]};
  return infer_image_shape(data.dim());
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

void check_feasible(const Vector& x, double eps, const Vector& z, const char* what) {
  if (!ThreatModel(x, eps).contains(z))
    throw InvariantError(std::string(what) + ": infeasible iterate (l1 distance " +
                         fmt((z - x).lpNorm<1>()) + ", radius " + fmt(eps) + ")");
}

// ---------------------------------------------------------------- attack

struct AttackRow {
  bool clean_correct = false;
  AttackResult result;
  std::vector<double> curve_loss;
  std::vector<bool> curve_success;
};

int cmd_attack(const Flags& flags) {
  Run run = open_run(flags, "attack");
  Settings& s = run.settings;
  const Workload w = load_workload(s, 1000);
  const LabeledDataset& data = w.data;
  const auto& model = w.model;
  const std::string kind = s.str("attack", "kind", "apgd-multi");
  const double eps = s.non_negative("attack", "eps", 2.0);

  std::function<AttackResult(const Vector&, int, Rng&)> attack;
  int length = 0;
  bool negate = false;
  if (kind == "apgd-single" || kind == "apgd-multi") {
    const int iters = s.positive("attack", "iters", 100);
    const int restarts = s.positive("attack", "restarts", 1);
    const ApgdConfig cfg = kind == "apgd-single" ? ApgdConfig::single_eps(iters) : ApgdConfig::multi_eps(iters);
    length = iters;
    attack = [&model, cfg, restarts, eps](const Vector& x, int y, Rng& rng) {
      return apgd_restarts(*model, LossKind::CrossEntropy, x, y, eps, cfg, restarts, rng, std::nullopt,
                           [&x](int, const Vector& z, double radius) { check_feasible(x, radius, z, "apgd"); });
    };
  } else if (kind == "slide" || kind == "slide-exact") {
    SlideConfig cfg;
    cfg.n_iter = s.positive("attack", "iters", 100);
    cfg.exact_projection = kind == "slide-exact";
    length = cfg.n_iter;
    attack = [&model, cfg, eps](const Vector& x, int y, Rng& rng) {
      return slide_attack(*model, x, y, eps, cfg, rng,
                          [&x](int, const Vector& z, double radius) { check_feasible(x, radius, z, "slide"); });
    };
  } else if (kind == "square") {
    SquareConfig cfg;
    cfg.n_queries = s.positive("attack", "queries", 1000);
    cfg.p_init = s.non_negative("attack", "p_init", 0.8);
    length = cfg.n_queries;
    negate = true;
    const ImageShape shape = shape_of(data);
    attack = [&model, cfg, eps, shape](const Vector& x, int y, Rng& rng) {
      return square_attack(*model, x, shape, y, eps, cfg, rng,
                           [&x, eps](int, const Vector& z, double, bool) { check_feasible(x, eps, z, "square"); });
    };
  } else {
    throw ConfigError("attack.kind must be apgd-single, apgd-multi, slide, slide-exact or square, got '" +
                      kind + "'");
  }

  std::vector<AttackRow> rows(data.size());
  parallel_for(data.size(), run.threads, [&](std::size_t i) {
    const Vector& x = data.inputs[i];
    const int y = data.labels[i];
    AttackRow& row = rows[i];
    row.clean_correct = is_correct(model->logits(x), y);
    if (!row.clean_correct) return;
    Rng rng(mix_seed(run.seed, i));
    row.result = attack(x, y, rng);
    check_feasible(x, eps, row.result.x_adv, kind.c_str());
    // Pad traces that stopped early with their last value.
    const auto& loss = row.result.loss_trace;
    const auto& success = row.result.success_trace;
    row.curve_loss.resize(static_cast<std::size_t>(length));
    row.curve_success.resize(static_cast<std::size_t>(length));
    for (std::size_t t = 0; t < row.curve_loss.size(); ++t) {
      const std::size_t j = std::min(t, loss.size() - 1);
      row.curve_loss[t] = negate ? -loss[j] : loss[j];
      row.curve_success[t] = t < success.size() ? success[t] : row.result.success;
    }
  });

  CsvWriter examples(run.out / "examples.csv",
                     {"example_id", "label", "clean_correct", "success", "robust", "loss_best", "l1_norm",
                      "iterations_used", "gradient_evals", "forward_evals"});
  std::size_t clean = 0, robust = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AttackRow& row = rows[i];
    const AttackResult& r = row.result;
    const bool is_robust = row.clean_correct && !r.success;
    clean += row.clean_correct ? 1 : 0;
    robust += is_robust ? 1 : 0;
    examples.row({fmt_int(i), fmt_int(data.labels[i]), fmt(row.clean_correct), fmt(r.success), fmt(is_robust),
                  row.clean_correct ? fmt(negate ? -r.loss_best : r.loss_best) : "", fmt(r.l1_norm),
                  fmt_int(r.iterations_used), fmt_int(r.gradient_evals), fmt_int(r.forward_evals)});
  }

  CsvWriter curve(run.out / "curve.csv", {"iter", "mean_best_loss", "robust_accuracy"});
  const auto n = static_cast<double>(data.size());
  for (int t = 0; t < length; ++t) {
    double loss_sum = 0.0;
    std::size_t attacked = 0, standing = 0;
    for (const AttackRow& row : rows) {
      if (!row.clean_correct) continue;
      ++attacked;
      loss_sum += row.curve_loss[static_cast<std::size_t>(t)];
      standing += row.curve_success[static_cast<std::size_t>(t)] ? 0 : 1;
    }
    curve.row({fmt_int(t + 1), attacked ? fmt(loss_sum / static_cast<double>(attacked)) : "",
               fmt(static_cast<double>(standing) / n)});
  }
  run.settings.write_resolved(run.out, "attack");
  std::cout << kind << " eps=" << fmt(eps) << " n=" << data.size() << " clean_accuracy=" << fmt(clean / n)
            << " robust_accuracy=" << fmt(robust / n) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const Flags& flags) {
  Run run = open_run(flags, "eval");
  Settings& s = run.settings;
  const Workload w = load_workload(s, 256);
  const LabeledDataset& data = w.data;
  const auto& model = w.model;
  const std::string& model_name = w.model_name;
  const double eps = s.non_negative("eval", "eps", 2.0);

  EnsembleConfig cfg;
  cfg.ce_restarts = s.positive("eval", "ce_restarts", cfg.ce_restarts);
  cfg.ce_iters = s.positive("eval", "ce_iters", cfg.ce_iters);
  cfg.tdlr_restarts = s.positive("eval", "tdlr_restarts", cfg.tdlr_restarts);
  cfg.tdlr_iters = s.positive("eval", "tdlr_iters", cfg.tdlr_iters);
  cfg.square_queries = s.positive("eval", "queries", cfg.square_queries);
  cfg.square_p_init = s.non_negative("eval", "p_init", cfg.square_p_init);
  cfg.include_square = s.flag("eval", "include_square", cfg.include_square);
  cfg.seed = run.seed;
  cfg.threads = run.threads;
  SlideConfig slide;
  slide.n_iter = s.positive("eval", "slide_iters", slide.n_iter);
  const auto columns = split_list(s.str("eval", "columns", "apgd-ce,apgd-t-dlr,square,slide"));

  const EvalReport aa = autoattack(*model, data, eps, cfg);
  for (const auto& e : aa.per_example)
    if (e.l1_norm > eps + 1e-9)
      throw InvariantError("autoattack: example " + fmt_int(e.example_id) + " left the threat set");

  CsvWriter table(run.out / "eval.csv", {"model", "attack", "eps", "clean_accuracy", "robust_accuracy"});
  auto report_row = [&](const std::string& attack, const EvalReport& r) {
    table.row({model_name, attack, fmt(eps), fmt(r.clean_accuracy), fmt(r.robust_accuracy)});
    std::cout << model_name << " " << attack << " eps=" << fmt(eps) << " clean=" << fmt(r.clean_accuracy)
              << " robust=" << fmt(r.robust_accuracy) << "\n";
  };
  report_row("autoattack", aa);
  for (const auto& column : columns) {
    if (column == "apgd-ce") {
      report_row(column, evaluate_component(*model, data, eps, cfg, Stage::ApgdCe));
    } else if (column == "apgd-t-dlr") {
      report_row(column, evaluate_component(*model, data, eps, cfg, Stage::ApgdTdlr));
    } else if (column == "square") {
      report_row(column, evaluate_component(*model, data, eps, cfg, Stage::Square));
    } else if (column == "slide") {
      const ExampleAttack attack = [&](const Vector& x, int y, std::size_t id) {
        Rng rng(stage_seed(run.seed, id, Stage::Attack));
        return slide_attack(*model, x, y, eps, slide, rng,
                            [&x](int, const Vector& z, double radius) { check_feasible(x, radius, z, "slide"); });
      };
      report_row(column, evaluate_attack(*model, data, attack, run.threads));
    } else {
      throw ConfigError("eval.columns: unknown attack '" + column + "'");
    }
  }

  CsvWriter examples(run.out / "examples.csv",
                     {"example_id", "clean_correct", "robust", "stage_broken", "best_loss", "l1_norm"});
  CsvWriter budget(run.out / "budget.csv", {"example_id", "stage", "gradient_evals", "forward_evals"});
  for (const auto& e : aa.per_example) {
    examples.row({fmt_int(e.example_id), fmt(e.clean_correct), fmt(e.robust), to_string(e.stage_broken),
                  fmt(e.best_loss), fmt(e.l1_norm)});
    for (Stage stage : {Stage::ApgdCe, Stage::ApgdTdlr, Stage::Square}) {
      const StageBudget& b = e.budget[static_cast<std::size_t>(stage) - 2];
      budget.row({fmt_int(e.example_id), to_string(stage), fmt_int(b.gradient_evals), fmt_int(b.forward_evals)});
    }
  }
  run.settings.write_resolved(run.out, "eval");
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const Flags& flags) {
  Run run = open_run(flags, "train");
  Settings& s = run.settings;
  const LabeledDataset data = load_data(s, 768);
  const double test_fraction = s.non_negative("train", "test_fraction", 1.0 / 3.0);
  if (test_fraction >= 1.0) throw ConfigError("train.test_fraction must be < 1");
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(data.size())));
  if (n_test == 0 || n_test == data.size()) throw ConfigError("train: both splits must be non-empty");
  const LabeledDataset train = data.subset(0, data.size() - n_test);
  const LabeledDataset test = data.subset(data.size() - n_test, data.size());

  Rng init(mix_seed(static_cast<std::uint64_t>(s.integer("model", "seed", 8)), 1));
  auto model = make_model(s.str("model", "kind", "mlp"), data.dim(), class_count(data),
                          s.positive("model", "hidden", 32), init);

  AtConfig cfg;
  cfg.eps_train = s.non_negative("train", "eps", 2.0);
  cfg.inner_steps = s.positive("train", "inner_steps", cfg.inner_steps);
  cfg.k0 = s.non_negative("train", "k0", cfg.k0);
  cfg.epochs = s.positive("train", "epochs", 15);
  cfg.lr = s.non_negative("train", "lr", cfg.lr);
  cfg.batch_size = static_cast<std::size_t>(s.positive("train", "batch_size", 32));
  cfg.seed = run.seed;
  const int probe_every = s.positive("train", "probe_every", 5);
  const double probe_eps = s.non_negative("train", "probe_eps", cfg.eps_train);

  const TrainingTrajectory trajectory = adv_train(*model, train, cfg);
  const auto probe = overfitting_probe(*model, trajectory, train, test, probe_eps, probe_every, cfg, run.threads);

  const fs::path model_path = run.out / "model.bxl";
  save_model(model_path, *model);
  const auto reloaded = load_model(model_path);
  for (const auto& x : test.inputs)
    if (reloaded->logits(x) != model->logits(x)) throw InvariantError("train: reloaded model disagrees");

  CsvWriter probe_csv(run.out / "probe.csv", {"epoch", "split", "attack", "robust_accuracy"});
  for (const auto& row : probe)
    probe_csv.row({fmt_int(row.epoch), row.split, row.attack, fmt(row.robust_accuracy)});

  CsvWriter log(run.out / "train_log.csv", {"epoch", "inner_loss", "train_clean_accuracy", "test_clean_accuracy"});
  auto snapshot = model->clone();
  for (std::size_t e = 1; e < trajectory.snapshots.size(); ++e) {
    snapshot->set_parameters(trajectory.snapshots[e]);
    log.row({fmt_int(e), fmt(trajectory.inner_loss[e - 1]), fmt(clean_accuracy(*snapshot, train)),
             fmt(clean_accuracy(*snapshot, test))});
  }
  run.settings.write_resolved(run.out, "train");
  std::cout << "trained " << model->kind() << " for " << cfg.epochs << " epochs at eps=" << fmt(cfg.eps_train)
            << ", test clean accuracy " << fmt(clean_accuracy(*model, test)) << "\n";
  return 0;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const Flags& flags) {
  Run run = open_run(flags, "verify");
  Settings& s = run.settings;
  const auto suites = split_list(s.str("verify", "suites", "projection,steepest,sparsity,gradient"));

  std::vector<verify::CheckResult> results;
  auto append = [&](std::vector<verify::CheckResult> r) {
    for (auto& c : r) {
      std::cout << verify::summary_line(c) << "\n";
      results.push_back(std::move(c));
    }
  };
  for (const auto& suite : suites) {
    if (suite == "projection") {
      verify::ProjectionSuite cfg;
      cfg.instances = s.positive("verify", "instances", cfg.instances);
      cfg.tolerance = s.non_negative("verify", "tolerance", cfg.tolerance);
      cfg.lambda_offset = s.flag("verify", "inject_bug", false) ? 1e-3 : 0.0;
      cfg.seed = mix_seed(run.seed, 1);
      cfg.threads = run.threads;
      append(verify::projection_suite(cfg));
    } else if (suite == "steepest") {
      verify::SteepestSuite cfg;
      cfg.instances = s.positive("verify", "steepest_instances", cfg.instances);
      cfg.samples = s.positive("verify", "steepest_samples", cfg.samples);
      cfg.seed = mix_seed(run.seed, 2);
      cfg.threads = run.threads;
      append(verify::steepest_suite(cfg));
    } else if (suite == "sparsity") {
      verify::SparsitySuite cfg;
      cfg.mc_samples = s.positive("verify", "mc_samples", cfg.mc_samples);
      cfg.seed = mix_seed(run.seed, 3);
      append(verify::sparsity_suite(cfg));
    } else if (suite == "gradient") {
      verify::GradientSuite cfg;
      cfg.points = s.positive("verify", "gradient_points", cfg.points);
      cfg.seed = mix_seed(run.seed, 4);
      append(verify::gradient_suite(cfg));
    } else {
      throw ConfigError("verify.suites: unknown suite '" + suite + "'");
    }
  }

  CsvWriter csv(run.out / "verify.csv", {"check", "pass", "checked", "failures", "worst"});
  bool all = true;
  for (const auto& r : results) {
    csv.row({r.name, fmt(r.pass), fmt_int(r.checked), fmt_int(r.failures), fmt(r.worst)});
    all = all && r.pass;
  }
  run.settings.write_resolved(run.out, "verify");
  std::cout << (all ? "PASS" : "FAIL") << " verify: " << results.size() << " checks\n";
  return all ? 0 : 3;
}

// ---------------------------------------------------------------- sparsity

int cmd_sparsity(const Flags& flags) {
  Run run = open_run(flags, "sparsity");
  Settings& s = run.settings;
  const auto radii = s.reals("sparsity", "eps", "1,2,4,8,12");
  const auto dims = s.reals("sparsity", "d", "3024");
  const long long samples = s.integer("sparsity", "mc_samples", 10000);
  if (samples < 0) throw ConfigError("sparsity.mc_samples must be >= 0");

  CsvWriter csv(run.out / "sparsity.csv",
                {"eps", "d", "closed_form", "irwin_hall", "lower_bound", "mc_mean", "mc_stderr"});
  std::uint64_t row = 0;
  for (double dim : dims) {
    const auto d = static_cast<std::int64_t>(dim);
    if (static_cast<double>(d) != dim || d < 2) throw ConfigError("sparsity.d entries must be integers >= 2");
    for (double eps : radii) {
      const double closed = expected_sparsity_closed_form(eps, d);
      std::string mean, err;
      if (samples > 0) {
        Rng rng(mix_seed(run.seed, row));
        const auto est = oracles::monte_carlo_sparsity(eps, d, samples, rng);
        mean = fmt(est.mean);
        err = fmt(est.stderr_);
      }
      csv.row({fmt(eps), fmt_int(d), fmt(closed), fmt(expected_sparsity_irwin_hall(eps, d)),
               fmt(expected_sparsity_lower_bound(eps)), mean, err});
      std::cout << "eps=" << fmt(eps) << " d=" << d << " expected_l0=" << fmt(closed)
                << (mean.empty() ? "" : " monte_carlo=" + mean) << "\n";
      ++row;
    }
  }
  run.settings.write_resolved(run.out, "sparsity");
  return 0;
}

// ---------------------------------------------------------------- bench

int cmd_bench(const Flags& flags) {
  Run run = open_run(flags, "bench");
  Settings& s = run.settings;
  const auto dims = s.reals("bench", "d", "1024,65536,1048576");
  const double eps = s.non_negative("bench", "eps", 12.0);
  const int repeats = s.positive("bench", "repeats", 5);

  CsvWriter csv(run.out / "bench.csv", {"d", "seconds_per_call", "ns_per_coordinate", "repeats"});
  Rng rng(run.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  for (double dim : dims) {
    const auto d = static_cast<Eigen::Index>(dim);
    if (static_cast<double>(d) != dim || d < 1) throw ConfigError("bench.d entries must be positive integers");
    const Vector x = Vector::NullaryExpr(d, [&] { return uniform(rng); });
    const Vector u = x + Vector::NullaryExpr(d, [&] { return normal(rng); });
    const ThreatModel tm(x, eps);
    Vector z = project_box_l1(u, tm);
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) z = project_box_l1(u, tm);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / repeats;
    if (!tm.contains(z)) throw InvariantError("bench: projection left the threat set");
    csv.row({fmt_int(d), fmt(seconds), fmt(seconds * 1e9 / static_cast<double>(d)), fmt_int(repeats)});
    std::cout << "d=" << d << " " << fmt(seconds * 1e3) << " ms/call\n";
  }
  run.settings.write_resolved(run.out, "bench");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-order l1 attacks on the box-constrained ball"};
  app.require_subcommand(1);
  Flags flags;
  int status = 0;

  auto add = [&](const std::string& name, const std::string& help, int (*body)(const Flags&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "Config file (key = value under [section] headers)");
    sub->add_option("--seed", flags.seed, "Global seed");
    sub->add_option("--eps", flags.eps, "l1 radius");
    sub->add_option("--iters", flags.iters, "Iterations per attack run");
    sub->add_option("--queries", flags.queries, "Square attack query budget");
    sub->add_option("--restarts", flags.restarts, "APGD restarts");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--threads", flags.threads, "Worker threads (default: BXL1_THREADS, then 1)");
    sub->callback([&status, &flags, body] { status = body(flags); });
  };
  add("attack", "Run one attack over a dataset and write per-example results and curves", cmd_attack);
  add("eval", "Ensemble evaluation with per-attack accuracy columns", cmd_eval);
  add("train", "Adversarial training with an overfitting probe", cmd_train);
  add("verify", "Run the oracle suites", cmd_verify);
  add("sparsity", "Expected sparsity of the steepest ascent step", cmd_sparsity);
  add("bench", "Time the exact projection", cmd_bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return status;
}
