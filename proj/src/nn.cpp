#include "tdr/nn.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "tdr/errors.hpp"

namespace tdr {

ParameterSet ParameterSet::zeros_like(const ParameterSet& other) {
  std::vector<DenseLayer> layers;
  layers.reserve(other.layers_.size());
  for (const auto& l : other.layers_) {
    layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  return ParameterSet(std::move(layers));
}

bool ParameterSet::congruent(const ParameterSet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

bool ParameterSet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

double ParameterSet::squared_norm() const {
  double total = 0.0;
  for (const auto& l : layers_) total += l.weight.squaredNorm() + l.bias.squaredNorm();
  return total;
}

std::size_t ParameterSet::size() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ParameterSet& ParameterSet::scale(double factor) {
  for (auto& l : layers_) {
    l.weight *= factor;
    l.bias *= factor;
  }
  return *this;
}

ParameterSet& ParameterSet::add_scaled(const ParameterSet& other, double factor) {
  if (!congruent(other)) throw ConfigError("add_scaled: parameter sets are not shape-congruent");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weight += factor * other.layers_[i].weight;
    layers_[i].bias += factor * other.layers_[i].bias;
  }
  return *this;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat.push_back(l.weight(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat.push_back(l.bias(r));
  }
  return flat;
}

void ParameterSet::assign_flat(std::span<const double> values) {
  if (values.size() != size()) throw ConfigError("assign_flat: expected " + std::to_string(size()) + " values");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = values[k++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = values[k++];
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].weight != other.layers_[i].weight || layers_[i].bias != other.layers_[i].bias) return false;
  }
  return true;
}

Mlp::Mlp(std::vector<int> dims, OutputHead head, double action_bound)
    : dims_(std::move(dims)), head_(head), action_bound_(action_bound) {
  if (dims_.size() < 2) throw ConfigError("Mlp needs at least an input and an output width");
  for (int d : dims_) {
    if (d <= 0) throw ConfigError("Mlp layer widths must be positive");
  }
  if (head_ == OutputHead::kTanhScaled && !(action_bound_ > 0.0)) throw ConfigError("action_bound must be > 0");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers.push_back({Eigen::MatrixXd::Zero(dims_[i + 1], dims_[i]), Eigen::VectorXd::Zero(dims_[i + 1])});
  }
  params_ = ParameterSet(std::move(layers));
}

Mlp Mlp::fan_in_uniform(std::vector<int> dims, OutputHead head, Rng& rng, double action_bound) {
  Mlp net(std::move(dims), head, action_bound);
  for (auto& l : net.params_.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = rng.uniform(-bound, bound);
  }
  return net;
}

void Mlp::check_input(const Eigen::MatrixXd& input) const {
  if (input.rows() != input_dim()) {
    throw ConfigError("Mlp::forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                      std::to_string(input_dim()));
  }
}

namespace {

void apply_softmax(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    const double peak = col.maxCoeff();
    col = (col.array() - peak).exp().matrix();
    col /= col.sum();
  }
}

}  // namespace

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, ForwardCache& cache) const {
  check_input(input);
  const auto& layers = params_.layers();
  const std::size_t n = layers.size();
  cache.input = input;
  cache.pre_activations.resize(n);
  cache.activations.resize(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::MatrixXd& x = (i == 0) ? cache.input : cache.activations[i - 1];
    Eigen::MatrixXd z = layers[i].weight * x;
    z.colwise() += layers[i].bias;
    cache.pre_activations[i] = std::move(z);
    if (i + 1 < n) cache.activations[i] = cache.pre_activations[i].cwiseMax(0.0);
  }
  Eigen::MatrixXd out = cache.pre_activations.back();
  switch (head_) {
    case OutputHead::kLinear:
      break;
    case OutputHead::kTanhScaled:
      out = action_bound_ * out.array().tanh();
      break;
    case OutputHead::kSoftmax:
      apply_softmax(out);
      break;
  }
  cache.output = out;
  return out;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  ForwardCache cache;
  return forward(input, cache);
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd y = forward(x);
  return std::vector<double>(y.data(), y.data() + y.size());
}

BackwardResult Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_cotangent) const {
  if (output_cotangent.rows() != output_dim() || output_cotangent.cols() != cache.output.cols()) {
    throw ConfigError("Mlp::backward: cotangent shape does not match the cached output");
  }
  Eigen::MatrixXd dz;
  switch (head_) {
    case OutputHead::kLinear:
      dz = output_cotangent;
      break;
    case OutputHead::kTanhScaled: {
      // d/dz [b tanh z] = b (1 - tanh^2 z) = b - out^2 / b
      const Eigen::ArrayXXd t = cache.output.array() / action_bound_;
      dz = (output_cotangent.array() * action_bound_ * (1.0 - t.square())).matrix();
      break;
    }
    case OutputHead::kSoftmax: {
      const Eigen::MatrixXd& p = cache.output;
      const Eigen::RowVectorXd inner = (p.array() * output_cotangent.array()).colwise().sum();
      dz = (p.array() * (output_cotangent.rowwise() - inner).array()).matrix();
      break;
    }
  }
  return backward_pre_head(cache, dz);
}

BackwardResult Mlp::backward_pre_head(const ForwardCache& cache, const Eigen::MatrixXd& pre_head_cotangent) const {
  if (pre_head_cotangent.rows() != output_dim() || pre_head_cotangent.cols() != cache.output.cols()) {
    throw ConfigError("Mlp::backward: cotangent shape does not match the cached output");
  }
  const auto& layers = params_.layers();
  const std::size_t n = layers.size();
  BackwardResult result;
  result.grads = ParameterSet::zeros_like(params_);
  Eigen::MatrixXd dz = pre_head_cotangent;
  for (std::size_t i = n; i-- > 0;) {
    const Eigen::MatrixXd& x = (i == 0) ? cache.input : cache.activations[i - 1];
    auto& g = result.grads.layer(i);
    g.weight.noalias() = dz * x.transpose();
    g.bias = dz.rowwise().sum();
    Eigen::MatrixXd dx = layers[i].weight.transpose() * dz;
    if (i == 0) {
      result.input_cotangent = std::move(dx);
    } else {
      const Eigen::MatrixXd& z = cache.pre_activations[i - 1];
      dz = (z.array() > 0.0).select(dx, 0.0);
    }
  }
  return result;
}

bool Mlp::congruent(const Mlp& other) const {
  return dims_ == other.dims_ && head_ == other.head_ && params_.congruent(other.params_);
}

AdamState AdamState::for_network(const Mlp& net, double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("Adam learning rate must be > 0");
  AdamState s;
  s.first_moment = ParameterSet::zeros_like(net.params());
  s.second_moment = ParameterSet::zeros_like(net.params());
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Mlp& net, const GradientSet& grads, AdamState& state) {
  if (!grads.congruent(net.params()) || !state.first_moment.congruent(net.params()) ||
      !state.second_moment.congruent(net.params())) {
    throw ConfigError("adam_step: gradient or moment shapes do not match the network");
  }
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient entries, update rejected");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto& params = net.params();
  for (std::size_t i = 0; i < params.num_layers(); ++i) {
    auto& p = params.layer(i);
    const auto& g = grads.layer(i);
    auto& m = state.first_moment.layer(i);
    auto& v = state.second_moment.layer(i);
    m.weight = state.beta1 * m.weight + (1.0 - state.beta1) * g.weight;
    m.bias = state.beta1 * m.bias + (1.0 - state.beta1) * g.bias;
    v.weight = state.beta2 * v.weight + (1.0 - state.beta2) * g.weight.cwiseProduct(g.weight);
    v.bias = state.beta2 * v.bias + (1.0 - state.beta2) * g.bias.cwiseProduct(g.bias);
    p.weight.array() -= state.learning_rate * (m.weight.array() / c1) / ((v.weight.array() / c2).sqrt() + state.epsilon);
    p.bias.array() -= state.learning_rate * (m.bias.array() / c1) / ((v.bias.array() / c2).sqrt() + state.epsilon);
  }
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.params().congruent(online.params())) throw ConfigError("soft_update: networks are not shape-congruent");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in (0, 1]");
  auto& t = target.params();
  const auto& o = online.params();
  for (std::size_t i = 0; i < t.num_layers(); ++i) {
    t.layer(i).weight = tau * o.layer(i).weight + (1.0 - tau) * t.layer(i).weight;
    t.layer(i).bias = tau * o.layer(i).bias + (1.0 - tau) * t.layer(i).bias;
  }
}

std::string to_string(OutputHead head) {
  switch (head) {
    case OutputHead::kLinear:
      return "linear";
    case OutputHead::kTanhScaled:
      return "tanh_scaled";
    case OutputHead::kSoftmax:
      return "softmax";
  }
  return "linear";
}

OutputHead output_head_from_string(const std::string& name) {
  if (name == "linear") return OutputHead::kLinear;
  if (name == "tanh_scaled") return OutputHead::kTanhScaled;
  if (name == "softmax") return OutputHead::kSoftmax;
  throw ConfigError("unknown output head '" + name + "'");
}

namespace {
constexpr const char* kCheckpointMagic = "tdr-mlp";
constexpr int kCheckpointVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& out, const Mlp& net) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "head " << to_string(net.head()) << '\n';
  out << std::setprecision(17) << "action_bound " << net.action_bound() << '\n';
  out << "dims " << net.dims().size();
  for (int d : net.dims()) out << ' ' << d;
  out << '\n';
  const auto flat = net.params().flatten();
  out << "params " << flat.size() << '\n';
  for (double v : flat) out << v << '\n';
}

Mlp read_checkpoint(std::istream& in) {
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != kCheckpointMagic || version != kCheckpointVersion) {
    throw ConfigError("checkpoint: bad header");
  }
  std::string head_name;
  double bound = 1.0;
  std::size_t n_dims = 0;
  if (!(in >> word >> head_name) || word != "head") throw ConfigError("checkpoint: missing head");
  if (!(in >> word >> bound) || word != "action_bound") throw ConfigError("checkpoint: missing action_bound");
  if (!(in >> word >> n_dims) || word != "dims") throw ConfigError("checkpoint: missing dims");
  std::vector<int> dims(n_dims);
  for (auto& d : dims) {
    if (!(in >> d)) throw ConfigError("checkpoint: truncated dims");
  }
  Mlp net(dims, output_head_from_string(head_name), bound);
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "params") throw ConfigError("checkpoint: missing params");
  if (count != net.params().size()) throw ConfigError("checkpoint: parameter count does not match dims");
  std::vector<double> flat(count);
  for (auto& v : flat) {
    if (!(in >> v)) throw ConfigError("checkpoint: truncated parameters");
  }
  net.params().assign_flat(flat);
  return net;
}

void save_checkpoint(const std::string& path, const Mlp& net) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_checkpoint(out, net);
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace tdr
