#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdr/rng.hpp"

namespace tdr {

/// How the last affine layer of an Mlp is transformed into its output.
enum class OutputHead {
  kLinear,
  kTanhScaled,  // action_bound * tanh(z)
  kSoftmax,     // probabilities over the output units
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// A list of dense layers. Serves as network parameters, gradients and Adam moments.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {}

  static ParameterSet zeros_like(const ParameterSet& other);

  std::size_t num_layers() const { return layers_.size(); }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool congruent(const ParameterSet& other) const;
  bool all_finite() const;
  double squared_norm() const;
  std::size_t size() const;

  ParameterSet& scale(double factor);
  /// this += factor * other
  ParameterSet& add_scaled(const ParameterSet& other, double factor);

  /// Flat row-major view: for each layer, weight rows then bias.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

using GradientSet = ParameterSet;

/// Intermediates of one batched forward pass; needed by Mlp::backward.
struct ForwardCache {
  Eigen::MatrixXd input;                     // in x B
  std::vector<Eigen::MatrixXd> pre_activations;  // per layer, out x B
  std::vector<Eigen::MatrixXd> activations;      // per hidden layer (post-ReLU)
  Eigen::MatrixXd output;                    // head applied
};

struct BackwardResult {
  GradientSet grads;               // summed over the batch columns
  Eigen::MatrixXd input_cotangent;  // in x B
};

/// Feed-forward ReLU network. Samples are columns: forward maps (in x B) -> (out x B).
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized network with the given layer widths (dims[0] = input width).
  Mlp(std::vector<int> dims, OutputHead head, double action_bound = 1.0);

  /// Fan-in uniform initialization: every weight and bias in layer i drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), layers in order, row-major.
  static Mlp fan_in_uniform(std::vector<int> dims, OutputHead head, Rng& rng, double action_bound = 1.0);

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  OutputHead head() const { return head_; }
  double action_bound() const { return action_bound_; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, ForwardCache& cache) const;
  std::vector<double> forward(std::span<const double> input) const;

  /// Exact gradients of sum_b <cotangent_b, output_b> with respect to every
  /// parameter and to the input.
  BackwardResult backward(const ForwardCache& cache, const Eigen::MatrixXd& output_cotangent) const;

  /// Same, but the cotangent is taken with respect to the pre-head values
  /// (logits for a softmax head). Lets cross-entropy use the p - t form directly.
  BackwardResult backward_pre_head(const ForwardCache& cache, const Eigen::MatrixXd& pre_head_cotangent) const;

  bool congruent(const Mlp& other) const;

 private:
  void check_input(const Eigen::MatrixXd& input) const;

  std::vector<int> dims_;
  OutputHead head_ = OutputHead::kLinear;
  double action_bound_ = 1.0;
  ParameterSet params_;
};

/// Adam optimizer state. Moments are shape-congruent with the parameters they update.
struct AdamState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_network(const Mlp& net, double learning_rate = 1e-3);
};

/// One bias-corrected Adam descent step (parameters move against grads).
/// Throws NumericError and leaves net and state untouched on non-finite gradients.
void adam_step(Mlp& net, const GradientSet& grads, AdamState& state);

/// target <- tau * online + (1 - tau) * target, parameter-wise.
void soft_update(Mlp& target, const Mlp& online, double tau);

/// Text checkpoint, see README for the layout. Values are written with 17
/// significant digits so reading back is bit-exact.
void write_checkpoint(std::ostream& out, const Mlp& net);
Mlp read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Mlp& net);
Mlp load_checkpoint(const std::string& path);

std::string to_string(OutputHead head);
OutputHead output_head_from_string(const std::string& name);

}  // namespace tdr
