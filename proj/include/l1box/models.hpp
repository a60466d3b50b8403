#ifndef L1BOX_MODELS_HPP
#define L1BOX_MODELS_HPP

#include "l1box/core.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace l1box {

enum class LossKind { CrossEntropy, DlrTargeted, Margin };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

/// A classifier seen through its logits and input-space vector-Jacobian product.
class LogitsOracle {
 public:
  virtual ~LogitsOracle() = default;
  virtual int num_classes() const = 0;
  virtual Eigen::Index input_dim() const = 0;
  virtual Vector logits(const Vector& x) const = 0;
  /// J(x)^T upstream, where J is the Jacobian of logits wrt the input.
  virtual Vector grad_input(const Vector& x, const Vector& upstream) const = 0;
};

/// A LogitsOracle with trainable parameters stored as one flat vector.
class DifferentiableClassifier : public LogitsOracle {
 public:
  virtual std::string kind() const = 0;
  /// Widths of every layer, input first, classes last.
  virtual std::vector<Eigen::Index> layer_sizes() const = 0;
  virtual Vector parameters() const = 0;
  virtual void set_parameters(const Vector& params) = 0;
  /// d(upstream . logits(x)) / d(parameters).
  virtual Vector grad_parameters(const Vector& x, const Vector& upstream) const = 0;
  virtual std::unique_ptr<DifferentiableClassifier> clone() const = 0;
};

/// logits = W x + b.
class LinearSoftmaxModel final : public DifferentiableClassifier {
 public:
  LinearSoftmaxModel(Matrix weights, Vector bias);
  static LinearSoftmaxModel random(Eigen::Index d, int num_classes, double scale, Rng& rng);

  int num_classes() const override { return static_cast<int>(weights_.rows()); }
  Eigen::Index input_dim() const override { return weights_.cols(); }
  Vector logits(const Vector& x) const override;
  Vector grad_input(const Vector& x, const Vector& upstream) const override;

  std::string kind() const override { return "linear"; }
  std::vector<Eigen::Index> layer_sizes() const override;
  Vector parameters() const override;
  void set_parameters(const Vector& params) override;
  Vector grad_parameters(const Vector& x, const Vector& upstream) const override;
  std::unique_ptr<DifferentiableClassifier> clone() const override;

  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }

 private:
  Matrix weights_;
  Vector bias_;
};

/// Fully connected network with softplus hidden activations.
class MlpModel final : public DifferentiableClassifier {
 public:
  /// sizes = {d, hidden..., num_classes}; needs at least one hidden layer.
  MlpModel(std::vector<Eigen::Index> sizes, Rng& rng);
  MlpModel(std::vector<Eigen::Index> sizes, const Vector& params);

  int num_classes() const override { return static_cast<int>(sizes_.back()); }
  Eigen::Index input_dim() const override { return sizes_.front(); }
  Vector logits(const Vector& x) const override;
  Vector grad_input(const Vector& x, const Vector& upstream) const override;

  std::string kind() const override { return "mlp"; }
  std::vector<Eigen::Index> layer_sizes() const override { return sizes_; }
  Vector parameters() const override;
  void set_parameters(const Vector& params) override;
  Vector grad_parameters(const Vector& x, const Vector& upstream) const override;
  std::unique_ptr<DifferentiableClassifier> clone() const override;

 private:
  struct Forward {
    std::vector<Vector> pre;   // pre-activations per layer
    std::vector<Vector> post;  // post[0] = x, post[l+1] = layer output
  };
  Forward forward(const Vector& x) const;
  /// Returns gradient wrt input; fills param_grad when non-null.
  Vector backward(const Forward& fw, const Vector& upstream, Vector* param_grad) const;
  static Eigen::Index parameter_count(const std::vector<Eigen::Index>& sizes);

  std::vector<Eigen::Index> sizes_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

/// Logits that do not depend on the input.
class ConstantModel final : public LogitsOracle {
 public:
  ConstantModel(Vector logits, Eigen::Index input_dim)
      : logits_(std::move(logits)), dim_(input_dim) {}
  int num_classes() const override { return static_cast<int>(logits_.size()); }
  Eigen::Index input_dim() const override { return dim_; }
  Vector logits(const Vector&) const override { return logits_; }
  Vector grad_input(const Vector&, const Vector&) const override { return Vector::Zero(dim_); }

 private:
  Vector logits_;
  Eigen::Index dim_;
};

double softplus(double t);
double sigmoid(double t);

/// -log softmax(logits)_y via log-sum-exp.
double cross_entropy(const Vector& logits, int y);
Vector cross_entropy_grad(const Vector& logits, int y);

/// Targeted difference-of-logits ratio
///   -(z_y - z_t) / (z_pi1 - (z_pi3 + z_pi4) / 2),
/// pi sorting the logits in decreasing order. The form follows the original
/// AutoAttack definition; the denominator is clamped to >= 1e-12.
double dlr_targeted(const Vector& logits, int y, int target);
Vector dlr_targeted_grad(const Vector& logits, int y, int target);

/// z_y - max_{j != y} z_j; negative iff some other class strictly wins.
double margin_loss(const Vector& logits, int y);

/// True iff logit y strictly exceeds every other logit. Shared maxima count
/// as misclassified.
bool is_correct(const Vector& logits, int y);
int predict(const Vector& logits);

/// Loss of the given kind evaluated on logits, and its gradient wrt them.
double loss_on_logits(const Vector& logits, int y, LossKind kind,
                      std::optional<int> target = std::nullopt);
Vector loss_logit_grad(const Vector& logits, int y, LossKind kind,
                       std::optional<int> target = std::nullopt);

struct LossGrad {
  double value = 0.0;
  Vector grad;
};

double loss_value(const LogitsOracle& model, const Vector& x, int y, LossKind kind,
                  std::optional<int> target = std::nullopt);
LossGrad loss_and_grad(const LogitsOracle& model, const Vector& x, int y, LossKind kind,
                       std::optional<int> target = std::nullopt);
/// Central finite differences of loss_value, one coordinate at a time.
Vector finite_diff_grad(const LogitsOracle& model, const Vector& x, int y, LossKind kind,
                        double h, std::optional<int> target = std::nullopt);

struct LabeledDataset {
  std::vector<Vector> inputs;
  std::vector<int> labels;
  /// Optional square image shape (h, h, c) for the flattened HWC inputs.
  std::optional<std::array<Eigen::Index, 3>> image_shape;

  std::size_t size() const { return inputs.size(); }
  Eigen::Index dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
  void validate(int num_classes) const;
  LabeledDataset subset(std::size_t begin, std::size_t end) const;
};

/// Gaussian blobs around class centers in [0,1]^d whose pairwise l1
/// distance is at least `margin`. Labels are assigned round-robin.
LabeledDataset make_blobs(Eigen::Index d, std::size_t n, int num_classes, double margin, Rng& rng,
                          double spread = 0.1);

/// 10-class 8x8x3 synthetic images built from make_blobs.
LabeledDataset make_toy_cifar(std::size_t n, Rng& rng, double margin = 24.0, double spread = 0.15);

double clean_accuracy(const LogitsOracle& model, const LabeledDataset& data);

struct SgdConfig {
  int epochs = 20;
  double lr = 0.1;
  std::size_t batch_size = 32;
};

/// Minibatch SGD on the mean cross-entropy.
void train_plain(DifferentiableClassifier& model, const LabeledDataset& data, const SgdConfig& cfg,
                 Rng& rng);

/// One SGD step on the mean cross-entropy of (inputs, labels).
void sgd_step(DifferentiableClassifier& model, const std::vector<Vector>& inputs,
              const std::vector<int>& labels, double lr);

}  // namespace l1box

#endif  // L1BOX_MODELS_HPP
