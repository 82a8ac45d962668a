#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdr/rng.hpp"

namespace tdr {

struct EnvState {
  std::vector<double> observation;
  int step_index = 0;
};

struct StepResult {
  std::vector<double> next_observation;
  double reward = 0.0;
  bool done = false;  // true exactly when the horizon is reached
};

/// Fixed-horizon continuous-control task with actions in [-1, 1]^d.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int observation_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;

  virtual EnvState reset(std::uint64_t seed) = 0;
  /// Clamps the action to [-1, 1]; throws ConfigError on non-finite components.
  virtual StepResult step(std::span<const double> action) = 0;
  virtual EnvState state() const = 0;

  /// Width of the reachable interval of each observation component (used to
  /// scale observation noise).
  virtual std::vector<double> observation_range() const = 0;

  /// Sparse-reward gate evaluated on the current physical state.
  virtual bool gate_passed(double threshold) const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double damping = 0.05;
  double torque_bound = 2.0;
  double max_speed = 8.0;
  double dt = 0.02;
  double reset_jitter = 0.05;
  int horizon = 200;
};

/// Torque-driven pendulum, angle measured from upright (theta = 0 balanced,
/// theta = pi hanging). Observation: [cos theta, sin theta, theta_dot].
///
/// theta_ddot = (g / l) sin(theta) - damping * theta_dot / (m l^2) + torque / (m l^2)
/// integrated with semi-implicit Euler; theta_dot is clamped to +-max_speed.
/// Reset: theta = pi + U(-j, j), theta_dot = U(-j, j) with j = reset_jitter.
/// Dense reward: (1 + cos theta) / 2 * (1 - 0.05 (theta_dot / max_speed)^2) * (1 - 0.05 u^2).
class Pendulum final : public Environment {
 public:
  explicit Pendulum(PendulumParams params = {});

  std::string name() const override { return "pendulum"; }
  int observation_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  int horizon() const override { return params_.horizon; }

  EnvState reset(std::uint64_t seed) override;
  StepResult step(std::span<const double> action) override;
  EnvState state() const override;
  std::vector<double> observation_range() const override;
  bool gate_passed(double threshold) const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<Pendulum>(*this); }

  /// Places the pendulum at an exact physical state (tests and scripted controllers).
  void set_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  /// Kinetic plus potential energy with the hanging rest state at zero.
  double mechanical_energy() const;
  const PendulumParams& params() const { return params_; }

 private:
  std::vector<double> observe() const;

  PendulumParams params_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int step_index_ = 0;
};

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.81;
  double force_bound = 10.0;
  double track_limit = 2.4;  // cart position confined to [-track_limit, track_limit]
  double max_cart_speed = 10.0;
  double max_pole_speed = 20.0;
  double dt = 0.02;
  double reset_jitter = 0.05;
  int horizon = 200;
};

/// Cart-pole swing-up (classic frictionless cart-pole equations). Observation:
/// [x, x_dot, cos theta, sin theta, theta_dot], theta = 0 upright. The cart stops
/// at the track ends (velocity zeroed) instead of terminating the episode.
/// Dense reward: (1 + cos theta) / 2 * (1 - 0.2 (x / track_limit)^2) * (1 - 0.05 u^2).
/// Sparse gate: cos theta > threshold and |x| < 0.25 * track_limit.
class CartPole final : public Environment {
 public:
  explicit CartPole(CartPoleParams params = {});

  std::string name() const override { return "cartpole"; }
  int observation_dim() const override { return 5; }
  int action_dim() const override { return 1; }
  int horizon() const override { return params_.horizon; }

  EnvState reset(std::uint64_t seed) override;
  StepResult step(std::span<const double> action) override;
  EnvState state() const override;
  std::vector<double> observation_range() const override;
  bool gate_passed(double threshold) const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CartPole>(*this); }

  void set_state(double x, double x_dot, double theta, double theta_dot);
  const CartPoleParams& params() const { return params_; }

 private:
  std::vector<double> observe() const;

  CartPoleParams params_;
  double x_ = 0.0, x_dot_ = 0.0, theta_ = 0.0, theta_dot_ = 0.0;
  int step_index_ = 0;
};

/// Replaces the wrapped task's reward by 1 when its gate passes, else 0.
class SparseReward final : public Environment {
 public:
  SparseReward(std::unique_ptr<Environment> inner, double threshold);
  SparseReward(const SparseReward& other);

  std::string name() const override { return inner_->name() + "_sparse"; }
  int observation_dim() const override { return inner_->observation_dim(); }
  int action_dim() const override { return inner_->action_dim(); }
  int horizon() const override { return inner_->horizon(); }

  EnvState reset(std::uint64_t seed) override { return inner_->reset(seed); }
  StepResult step(std::span<const double> action) override;
  EnvState state() const override { return inner_->state(); }
  std::vector<double> observation_range() const override { return inner_->observation_range(); }
  bool gate_passed(double threshold) const override { return inner_->gate_passed(threshold); }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<SparseReward>(*this); }

  double threshold() const { return threshold_; }
  Environment& inner() { return *inner_; }

 private:
  std::unique_ptr<Environment> inner_;
  double threshold_;
};

std::unique_ptr<Environment> sparsify(std::unique_ptr<Environment> dense, double threshold);

/// Uniform perturbation fractions; a component c becomes c + U(-f, f) * range(c).
struct NoiseSpec {
  double state_frac = 0.10;
  double action_frac = 0.10;
  double reward_frac = 0.10;
  std::uint64_t seed = 0;

  bool any() const { return state_frac > 0.0 || action_frac > 0.0 || reward_frac > 0.0; }
};

struct PerturbedStep {
  std::vector<double> observation;
  std::vector<double> action;
  double reward = 0.0;
};

/// Stateful sampler for the perturbation protocol. Actions live in [-1, 1] so
/// their range is 2. Reward noise is multiplicative: r * (1 + U(-f, f)), floored at 0.
class NoiseModel {
 public:
  explicit NoiseModel(NoiseSpec spec);

  std::vector<double> perturb_observation(std::span<const double> obs, std::span<const double> ranges);
  std::vector<double> perturb_action(std::span<const double> action);
  double perturb_reward(double reward);

  const NoiseSpec& spec() const { return spec_; }

 private:
  NoiseSpec spec_;
  Rng rng_;
};

/// Perturbs a step's observation, the executed action and the reward in one go.
PerturbedStep apply_noise(const StepResult& result, std::span<const double> action,
                          std::span<const double> observation_range, NoiseModel& noise);

}  // namespace tdr
