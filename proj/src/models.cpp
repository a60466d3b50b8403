#include "l1box/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace l1box {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::DlrTargeted: return "dlr-targeted";
    case LossKind::Margin: return "margin";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ce" || name == "cross-entropy") return LossKind::CrossEntropy;
  if (name == "dlr-targeted" || name == "t-dlr") return LossKind::DlrTargeted;
  if (name == "margin") return LossKind::Margin;
  throw ParameterError("unknown loss kind: " + name);
}

// ---------------------------------------------------------------- linear

LinearSoftmaxModel::LinearSoftmaxModel(Matrix weights, Vector bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.rows() != bias_.size())
    throw DimensionError("LinearSoftmaxModel: bias length must match number of classes");
  if (weights_.rows() < 2) throw ParameterError("LinearSoftmaxModel: need at least 2 classes");
  if (!weights_.allFinite() || !bias_.allFinite())
    throw ParameterError("LinearSoftmaxModel: non-finite parameters");
}

LinearSoftmaxModel LinearSoftmaxModel::random(Eigen::Index d, int num_classes, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix w(num_classes, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (int c = 0; c < num_classes; ++c) w(c, j) = normal(rng);
  return {std::move(w), Vector::Zero(num_classes)};
}

Vector LinearSoftmaxModel::logits(const Vector& x) const {
  require_same_size(x, input_dim(), "LinearSoftmaxModel::logits");
  return weights_ * x + bias_;
}

Vector LinearSoftmaxModel::grad_input(const Vector& x, const Vector& upstream) const {
  require_same_size(x, input_dim(), "LinearSoftmaxModel::grad_input");
  require_same_size(upstream, num_classes(), "LinearSoftmaxModel::grad_input");
  return weights_.transpose() * upstream;
}

std::vector<Eigen::Index> LinearSoftmaxModel::layer_sizes() const {
  return {input_dim(), static_cast<Eigen::Index>(num_classes())};
}

Vector LinearSoftmaxModel::parameters() const {
  Vector p(weights_.size() + bias_.size());
  p.head(weights_.size()) = weights_.reshaped();
  p.tail(bias_.size()) = bias_;
  return p;
}

void LinearSoftmaxModel::set_parameters(const Vector& params) {
  require_same_size(params, weights_.size() + bias_.size(), "LinearSoftmaxModel::set_parameters");
  weights_.reshaped() = params.head(weights_.size());
  bias_ = params.tail(bias_.size());
}

Vector LinearSoftmaxModel::grad_parameters(const Vector& x, const Vector& upstream) const {
  Vector g(weights_.size() + bias_.size());
  const Matrix outer = upstream * x.transpose();
  g.head(weights_.size()) = outer.reshaped();
  g.tail(bias_.size()) = upstream;
  return g;
}

std::unique_ptr<DifferentiableClassifier> LinearSoftmaxModel::clone() const {
  return std::make_unique<LinearSoftmaxModel>(*this);
}

// ---------------------------------------------------------------- mlp

double softplus(double t) {
  return t > 30.0 ? t : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

Eigen::Index MlpModel::parameter_count(const std::vector<Eigen::Index>& sizes) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * (sizes[l] + 1);
  return n;
}

static void check_mlp_sizes(const std::vector<Eigen::Index>& sizes) {
  if (sizes.size() < 3) throw ParameterError("MlpModel: need at least one hidden layer");
  for (auto s : sizes)
    if (s < 1) throw ParameterError("MlpModel: layer sizes must be positive");
  if (sizes.back() < 2) throw ParameterError("MlpModel: need at least 2 classes");
}

MlpModel::MlpModel(std::vector<Eigen::Index> sizes, Rng& rng) : sizes_(std::move(sizes)) {
  check_mlp_sizes(sizes_);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(sizes_[l])));
    Matrix w(sizes_[l + 1], sizes_[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
    weights_.push_back(std::move(w));
    biases_.push_back(Vector::Zero(sizes_[l + 1]));
  }
}

MlpModel::MlpModel(std::vector<Eigen::Index> sizes, const Vector& params) : sizes_(std::move(sizes)) {
  check_mlp_sizes(sizes_);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.emplace_back(sizes_[l + 1], sizes_[l]);
    biases_.emplace_back(sizes_[l + 1]);
  }
  set_parameters(params);
}

MlpModel::Forward MlpModel::forward(const Vector& x) const {
  require_same_size(x, input_dim(), "MlpModel::forward");
  Forward fw;
  fw.post.push_back(x);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vector a = weights_[l] * fw.post.back() + biases_[l];
    fw.pre.push_back(a);
    if (l + 1 < weights_.size()) a = a.unaryExpr([](double t) { return softplus(t); });
    fw.post.push_back(std::move(a));
  }
  return fw;
}

Vector MlpModel::backward(const Forward& fw, const Vector& upstream, Vector* param_grad) const {
  require_same_size(upstream, num_classes(), "MlpModel::backward");
  if (param_grad) param_grad->resize(parameter_count(sizes_));
  // Offsets of each layer's block in the flat parameter vector.
  std::vector<Eigen::Index> offset(weights_.size() + 1, 0);
  for (std::size_t l = 0; l < weights_.size(); ++l)
    offset[l + 1] = offset[l] + weights_[l].size() + biases_[l].size();

  Vector delta = upstream;  // d/d(pre-activation of the current layer)
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (param_grad) {
      const Matrix gw = delta * fw.post[l].transpose();
      param_grad->segment(offset[l], gw.size()) = gw.reshaped();
      param_grad->segment(offset[l] + gw.size(), delta.size()) = delta;
    }
    Vector back = weights_[l].transpose() * delta;
    if (l > 0) back = back.cwiseProduct(fw.pre[l - 1].unaryExpr([](double t) { return sigmoid(t); }));
    delta = std::move(back);
  }
  return delta;
}

Vector MlpModel::logits(const Vector& x) const { return forward(x).post.back(); }

Vector MlpModel::grad_input(const Vector& x, const Vector& upstream) const {
  return backward(forward(x), upstream, nullptr);
}

Vector MlpModel::parameters() const {
  Vector p(parameter_count(sizes_));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.segment(at, weights_[l].size()) = weights_[l].reshaped();
    at += weights_[l].size();
    p.segment(at, biases_[l].size()) = biases_[l];
    at += biases_[l].size();
  }
  return p;
}

void MlpModel::set_parameters(const Vector& params) {
  require_same_size(params, parameter_count(sizes_), "MlpModel::set_parameters");
  if (!params.allFinite()) throw ParameterError("MlpModel: non-finite parameters");
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l].reshaped() = params.segment(at, weights_[l].size());
    at += weights_[l].size();
    biases_[l] = params.segment(at, biases_[l].size());
    at += biases_[l].size();
  }
}

Vector MlpModel::grad_parameters(const Vector& x, const Vector& upstream) const {
  Vector g;
  backward(forward(x), upstream, &g);
  return g;
}

std::unique_ptr<DifferentiableClassifier> MlpModel::clone() const {
  return std::make_unique<MlpModel>(*this);
}

// ---------------------------------------------------------------- losses

static void check_label(const Vector& logits, int y, const char* what) {
  if (y < 0 || y >= logits.size())
    throw ParameterError(std::string(what) + ": label " + std::to_string(y) + " out of range");
}

double cross_entropy(const Vector& logits, int y) {
  check_label(logits, y, "cross_entropy");
  Eigen::Index arg = 0;
  const double top = logits.maxCoeff(&arg);
  double rest = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != arg) rest += std::exp(logits[j] - top);
  return std::max(0.0, (top - logits[y]) + std::log1p(rest));
}

Vector cross_entropy_grad(const Vector& logits, int y) {
  check_label(logits, y, "cross_entropy_grad");
  const double top = logits.maxCoeff();
  Vector p = (logits.array() - top).exp();
  p /= p.sum();
  p[y] -= 1.0;
  return p;
}

namespace {

struct DlrParts {
  std::array<Eigen::Index, 4> order{};  // indices of the 4 largest logits
  double denominator = 0.0;
  bool clamped = false;
};

DlrParts dlr_parts(const Vector& logits, int y, int target) {
  if (logits.size() < 4) throw UnsupportedError("dlr_targeted: needs at least 4 classes");
  check_label(logits, y, "dlr_targeted");
  check_label(logits, target, "dlr_targeted");
  if (target == y) throw ParameterError("dlr_targeted: target must differ from the label");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(logits.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::partial_sort(idx.begin(), idx.begin() + 4, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  DlrParts parts;
  std::copy(idx.begin(), idx.begin() + 4, parts.order.begin());
  const double raw = logits[parts.order[0]] - 0.5 * (logits[parts.order[2]] + logits[parts.order[3]]);
  parts.clamped = raw < 1e-12;
  parts.denominator = parts.clamped ? 1e-12 : raw;
  return parts;
}

}  // namespace

double dlr_targeted(const Vector& logits, int y, int target) {
  const DlrParts parts = dlr_parts(logits, y, target);
  return -(logits[y] - logits[target]) / parts.denominator;
}

Vector dlr_targeted_grad(const Vector& logits, int y, int target) {
  const DlrParts parts = dlr_parts(logits, y, target);
  const double den = parts.denominator;
  const double num = -(logits[y] - logits[target]);
  Vector g = Vector::Zero(logits.size());
  g[y] -= 1.0 / den;
  g[target] += 1.0 / den;
  if (!parts.clamped) {
    const double scale = -num / (den * den);
    g[parts.order[0]] += scale;
    g[parts.order[2]] -= 0.5 * scale;
    g[parts.order[3]] -= 0.5 * scale;
  }
  return g;
}

double margin_loss(const Vector& logits, int y) {
  check_label(logits, y, "margin_loss");
  double other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != y) other = std::max(other, logits[j]);
  return logits[y] - other;
}

bool is_correct(const Vector& logits, int y) { return margin_loss(logits, y) > 0.0; }

int predict(const Vector& logits) {
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

static Vector margin_grad(const Vector& logits, int y) {
  Vector g = Vector::Zero(logits.size());
  Eigen::Index other = -1;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != y && (other < 0 || logits[j] > logits[other])) other = j;
  g[y] = 1.0;
  g[other] = -1.0;
  return g;
}

double loss_on_logits(const Vector& z, int y, LossKind kind, std::optional<int> target) {
  switch (kind) {
    case LossKind::CrossEntropy: return cross_entropy(z, y);
    case LossKind::Margin: return margin_loss(z, y);
    case LossKind::DlrTargeted:
      if (!target) throw ParameterError("loss_and_grad: dlr-targeted needs a target class");
      return dlr_targeted(z, y, *target);
  }
  throw ParameterError("unknown loss kind");
}

Vector loss_logit_grad(const Vector& z, int y, LossKind kind, std::optional<int> target) {
  switch (kind) {
    case LossKind::CrossEntropy: return cross_entropy_grad(z, y);
    case LossKind::Margin: return margin_grad(z, y);
    case LossKind::DlrTargeted:
      if (!target) throw ParameterError("loss_logit_grad: dlr-targeted needs a target class");
      return dlr_targeted_grad(z, y, *target);
  }
  throw ParameterError("unknown loss kind");
}

double loss_value(const LogitsOracle& model, const Vector& x, int y, LossKind kind,
                  std::optional<int> target) {
  return loss_on_logits(model.logits(x), y, kind, target);
}

LossGrad loss_and_grad(const LogitsOracle& model, const Vector& x, int y, LossKind kind,
                       std::optional<int> target) {
  const Vector z = model.logits(x);
  LossGrad out;
  out.value = loss_on_logits(z, y, kind, target);
  out.grad = model.grad_input(x, loss_logit_grad(z, y, kind, target));
  return out;
}

Vector finite_diff_grad(const LogitsOracle& model, const Vector& x, int y, LossKind kind, double h,
                        std::optional<int> target) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_grad: h must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = loss_value(model, probe, y, kind, target);
    probe[i] = x[i] - h;
    const double down = loss_value(model, probe, y, kind, target);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------- data

void LabeledDataset::validate(int num_classes) const {
  if (inputs.size() != labels.size())
    throw DimensionError("LabeledDataset: inputs and labels differ in length");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ParameterError("LabeledDataset: label out of range at row " + std::to_string(i));
    if (inputs[i].size() != dim()) throw DimensionError("LabeledDataset: ragged inputs");
    if ((inputs[i].array() < 0.0).any() || (inputs[i].array() > 1.0).any())
      throw InvariantError("LabeledDataset: input outside [0,1]^d at row " + std::to_string(i));
  }
}

LabeledDataset LabeledDataset::subset(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  LabeledDataset out;
  out.image_shape = image_shape;
  for (std::size_t i = begin; i < end; ++i) {
    out.inputs.push_back(inputs[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

LabeledDataset make_blobs(Eigen::Index d, std::size_t n, int num_classes, double margin, Rng& rng,
                          double spread) {
  if (d < 1 || num_classes < 2) throw ParameterError("make_blobs: need d >= 1 and >= 2 classes");
  if (!(margin > 0.0)) throw ParameterError("make_blobs: margin must be > 0");
  constexpr double amplitude = 0.35;  // centers are 0.5 +- amplitude per coordinate
  if (margin > 2.0 * amplitude * static_cast<double>(d))
    throw ParameterError("make_blobs: separation " + std::to_string(margin) +
                         " is not constructible in dimension " + std::to_string(d));

  std::bernoulli_distribution coin(0.5);
  std::vector<Vector> centers;
  for (int attempt = 0; attempt < 1000 && static_cast<int>(centers.size()) < num_classes; ++attempt) {
    Vector c(d);
    if (num_classes == 2 && centers.size() == 1) {
      c = Vector::Constant(d, 1.0) - centers[0];
    } else {
      for (Eigen::Index i = 0; i < d; ++i) c[i] = 0.5 + (coin(rng) ? amplitude : -amplitude);
    }
    const bool separated = std::all_of(centers.begin(), centers.end(), [&](const Vector& other) {
      return (other - c).lpNorm<1>() >= margin;
    });
    if (separated) centers.push_back(std::move(c));
  }
  if (static_cast<int>(centers.size()) < num_classes)
    throw ParameterError("make_blobs: could not place centers with the requested separation");

  std::normal_distribution<double> noise(0.0, spread);
  LabeledDataset data;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    Vector v = centers[static_cast<std::size_t>(label)];
    for (Eigen::Index j = 0; j < d; ++j) v[j] += noise(rng);
    data.inputs.push_back(v.cwiseMax(0.0).cwiseMin(1.0));
    data.labels.push_back(label);
  }
  return data;
}

LabeledDataset make_toy_cifar(std::size_t n, Rng& rng, double margin, double spread) {
  LabeledDataset data = make_blobs(8 * 8 * 3, n, 10, margin, rng, spread);
  data.image_shape = std::array<Eigen::Index, 3>{8, 8, 3};
  return data;
}

double clean_accuracy(const LogitsOracle& model, const LabeledDataset& data) {
  if (data.size() == 0) throw ParameterError("clean_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    correct += is_correct(model.logits(data.inputs[i]), data.labels[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void sgd_step(DifferentiableClassifier& model, const std::vector<Vector>& inputs,
              const std::vector<int>& labels, double lr) {
  if (inputs.empty() || lr == 0.0) return;
  Vector grad = Vector::Zero(model.parameters().size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Vector upstream = cross_entropy_grad(model.logits(inputs[i]), labels[i]);
    grad += model.grad_parameters(inputs[i], upstream);
  }
  model.set_parameters(model.parameters() - (lr / static_cast<double>(inputs.size())) * grad);
}

void train_plain(DifferentiableClassifier& model, const LabeledDataset& data, const SgdConfig& cfg,
                 Rng& rng) {
  data.validate(model.num_classes());
  if (cfg.batch_size < 1) throw ParameterError("train_plain: batch_size must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<Vector> xs;
      std::vector<int> ys;
      for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_size); ++j) {
        xs.push_back(data.inputs[order[j]]);
        ys.push_back(data.labels[order[j]]);
      }
      sgd_step(model, xs, ys, cfg.lr);
    }
  }
}

}  // namespace l1box
