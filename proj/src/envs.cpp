#include "tdr/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tdr/errors.hpp"

namespace tdr {

namespace {

double clamp_action(std::span<const double> action, std::size_t expected) {
  if (action.size() != expected) throw ConfigError("step: action has wrong dimension");
  for (double a : action) {
    if (!std::isfinite(a)) throw ConfigError("step: non-finite action");
  }
  return std::clamp(action[0], -1.0, 1.0);
}

double wrap_angle(double theta) { return std::remainder(theta, 2.0 * std::numbers::pi); }

}  // namespace

Pendulum::Pendulum(PendulumParams params) : params_(params) {
  if (params_.horizon <= 0) throw ConfigError("pendulum: horizon must be positive");
  if (!(params_.dt > 0.0) || !(params_.mass > 0.0) || !(params_.length > 0.0)) {
    throw ConfigError("pendulum: dt, mass and length must be positive");
  }
}

EnvState Pendulum::reset(std::uint64_t seed) {
  Rng rng(seed);
  const double j = params_.reset_jitter;
  theta_ = wrap_angle(std::numbers::pi + rng.uniform(-j, j));
  theta_dot_ = rng.uniform(-j, j);
  step_index_ = 0;
  return state();
}

StepResult Pendulum::step(std::span<const double> action) {
  const double u = clamp_action(action, 1);
  const double inertia = params_.mass * params_.length * params_.length;
  const double accel = (params_.gravity / params_.length) * std::sin(theta_) - params_.damping * theta_dot_ / inertia +
                       params_.torque_bound * u / inertia;
  theta_dot_ = std::clamp(theta_dot_ + params_.dt * accel, -params_.max_speed, params_.max_speed);
  theta_ = wrap_angle(theta_ + params_.dt * theta_dot_);
  ++step_index_;

  const double speed_ratio = theta_dot_ / params_.max_speed;
  StepResult result;
  result.reward = 0.5 * (1.0 + std::cos(theta_)) * (1.0 - 0.05 * speed_ratio * speed_ratio) * (1.0 - 0.05 * u * u);
  result.next_observation = observe();
  result.done = step_index_ >= params_.horizon;
  return result;
}

EnvState Pendulum::state() const { return {observe(), step_index_}; }

std::vector<double> Pendulum::observe() const { return {std::cos(theta_), std::sin(theta_), theta_dot_}; }

std::vector<double> Pendulum::observation_range() const { return {2.0, 2.0, 2.0 * params_.max_speed}; }

bool Pendulum::gate_passed(double threshold) const { return std::cos(theta_) > threshold; }

void Pendulum::set_state(double theta, double theta_dot) {
  theta_ = wrap_angle(theta);
  theta_dot_ = theta_dot;
}

double Pendulum::mechanical_energy() const {
  const double inertia = params_.mass * params_.length * params_.length;
  return 0.5 * inertia * theta_dot_ * theta_dot_ +
         params_.mass * params_.gravity * params_.length * (1.0 + std::cos(theta_));
}

CartPole::CartPole(CartPoleParams params) : params_(params) {
  if (params_.horizon <= 0) throw ConfigError("cartpole: horizon must be positive");
  if (!(params_.dt > 0.0) || !(params_.track_limit > 0.0)) throw ConfigError("cartpole: dt and track must be positive");
}

EnvState CartPole::reset(std::uint64_t seed) {
  Rng rng(seed);
  const double j = params_.reset_jitter;
  x_ = rng.uniform(-j, j);
  x_dot_ = rng.uniform(-j, j);
  theta_ = wrap_angle(std::numbers::pi + rng.uniform(-j, j));
  theta_dot_ = rng.uniform(-j, j);
  step_index_ = 0;
  return state();
}

StepResult CartPole::step(std::span<const double> action) {
  const double u = clamp_action(action, 1);
  const double force = params_.force_bound * u;
  const double total_mass = params_.cart_mass + params_.pole_mass;
  const double pole_moment = params_.pole_mass * params_.pole_half_length;
  const double sin_t = std::sin(theta_);
  const double cos_t = std::cos(theta_);
  const double temp = (force + pole_moment * theta_dot_ * theta_dot_ * sin_t) / total_mass;
  const double theta_acc = (params_.gravity * sin_t - cos_t * temp) /
                           (params_.pole_half_length * (4.0 / 3.0 - params_.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;

  x_dot_ = std::clamp(x_dot_ + params_.dt * x_acc, -params_.max_cart_speed, params_.max_cart_speed);
  x_ += params_.dt * x_dot_;
  if (std::abs(x_) > params_.track_limit) {
    x_ = std::copysign(params_.track_limit, x_);
    x_dot_ = 0.0;
  }
  theta_dot_ = std::clamp(theta_dot_ + params_.dt * theta_acc, -params_.max_pole_speed, params_.max_pole_speed);
  theta_ = wrap_angle(theta_ + params_.dt * theta_dot_);
  ++step_index_;

  const double pos_ratio = x_ / params_.track_limit;
  StepResult result;
  result.reward = 0.5 * (1.0 + std::cos(theta_)) * (1.0 - 0.2 * pos_ratio * pos_ratio) * (1.0 - 0.05 * u * u);
  result.next_observation = observe();
  result.done = step_index_ >= params_.horizon;
  return result;
}

EnvState CartPole::state() const { return {observe(), step_index_}; }

std::vector<double> CartPole::observe() const {
  return {x_, x_dot_, std::cos(theta_), std::sin(theta_), theta_dot_};
}

std::vector<double> CartPole::observation_range() const {
  return {2.0 * params_.track_limit, 2.0 * params_.max_cart_speed, 2.0, 2.0, 2.0 * params_.max_pole_speed};
}

bool CartPole::gate_passed(double threshold) const {
  return std::cos(theta_) > threshold && std::abs(x_) < 0.25 * params_.track_limit;
}

void CartPole::set_state(double x, double x_dot, double theta, double theta_dot) {
  x_ = x;
  x_dot_ = x_dot;
  theta_ = wrap_angle(theta);
  theta_dot_ = theta_dot;
}

SparseReward::SparseReward(std::unique_ptr<Environment> inner, double threshold)
    : inner_(std::move(inner)), threshold_(threshold) {
  if (!inner_) throw ConfigError("sparsify: null environment");
  if (!(threshold > -1.0 && threshold < 1.0)) throw ConfigError("sparsify: threshold must lie in (-1, 1)");
}

SparseReward::SparseReward(const SparseReward& other) : inner_(other.inner_->clone()), threshold_(other.threshold_) {}

StepResult SparseReward::step(std::span<const double> action) {
  StepResult result = inner_->step(action);
  result.reward = inner_->gate_passed(threshold_) ? 1.0 : 0.0;
  return result;
}

std::unique_ptr<Environment> sparsify(std::unique_ptr<Environment> dense, double threshold) {
  return std::make_unique<SparseReward>(std::move(dense), threshold);
}

NoiseModel::NoiseModel(NoiseSpec spec) : spec_(spec), rng_(spec.seed) {
  for (double f : {spec.state_frac, spec.action_frac, spec.reward_frac}) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("noise fractions must lie in [0, 1)");
  }
}

std::vector<double> NoiseModel::perturb_observation(std::span<const double> obs, std::span<const double> ranges) {
  std::vector<double> out(obs.begin(), obs.end());
  if (spec_.state_frac == 0.0) return out;
  if (ranges.size() != obs.size()) throw ConfigError("perturb_observation: range size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rng_.uniform(-spec_.state_frac, spec_.state_frac) * ranges[i];
  return out;
}

std::vector<double> NoiseModel::perturb_action(std::span<const double> action) {
  std::vector<double> out(action.begin(), action.end());
  if (spec_.action_frac == 0.0) return out;
  for (double& a : out) a += rng_.uniform(-spec_.action_frac, spec_.action_frac) * 2.0;
  return out;
}

double NoiseModel::perturb_reward(double reward) {
  if (spec_.reward_frac == 0.0) return reward;
  return std::max(0.0, reward * (1.0 + rng_.uniform(-spec_.reward_frac, spec_.reward_frac)));
}

PerturbedStep apply_noise(const StepResult& result, std::span<const double> action,
                          std::span<const double> observation_range, NoiseModel& noise) {
  PerturbedStep out;
  out.observation = noise.perturb_observation(result.next_observation, observation_range);
  out.action = noise.perturb_action(action);
  out.reward = noise.perturb_reward(result.reward);
  return out;
}

}  // namespace tdr
