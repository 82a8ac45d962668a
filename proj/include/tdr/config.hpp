#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tdr/actor.hpp"
#include "tdr/critic_twin.hpp"
#include "tdr/envs.hpp"

namespace tdr {

enum class Algorithm { kTd3, kTd3Tdr, kD4pg, kD4pgTdr };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);
bool is_distributional(Algorithm algorithm);
/// td3 and d4pg are the unregularized baselines: rho = 0, dq rule, lnss_n = 1.
bool is_baseline(Algorithm algorithm);

struct TrainConfig {
  Algorithm algorithm = Algorithm::kTd3Tdr;

  // Environment.
  std::string env = "pendulum";  // pendulum | cartpole
  bool sparse = false;
  double sparse_threshold = 0.95;
  int horizon = 200;
  double pendulum_torque_bound = 2.0;
  double pendulum_damping = 0.05;
  double cartpole_force_bound = 10.0;
  double state_noise = 0.10;
  double action_noise = 0.10;
  double reward_noise = 0.10;

  // Schedule.
  std::uint64_t seed = 0;
  std::int64_t max_timesteps = 100000;
  std::int64_t start_timesteps = 2000;
  std::int64_t eval_frequency = 2000;
  int eval_episodes = 5;
  int psi_rollouts = 10;
  double success_threshold = 20.0;

  // Learning.
  std::size_t batch_size = 256;
  std::size_t buffer_size = 100000;
  std::vector<int> hidden{64, 64};
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double gamma = 0.99;
  double tau = 0.005;
  int policy_update_frequency = 2;
  double exploration_noise = 0.1;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  double init_scale = 1.0;      // multiplies the fan-in uniform bound 1/sqrt(fan_in)
  double grad_clip_norm = 0.0;  // per-network global L2 clip before Adam; 0 disables

  // Regularization.
  std::size_t lnss_n = 20;
  double rho = 0.7;
  PenaltyMode penalty_mode = PenaltyMode::kThroughBootstrap;
  TargetRule critic_target_rule = TargetRule::kTdRegularized;

  // Distributional support.
  double v_min = 0.0;
  double v_max = 50.0;
  int atoms = 51;

  // Output.
  bool log_wall_time = false;
  bool save_checkpoints = true;
};

/// "desk" (default, minutes per seed) or "full" (T = 1000, 1e6 steps, 256-wide networks).
TrainConfig preset_config(const std::string& name);

/// Throws ConfigError on any inconsistent or out-of-range value.
void validate(const TrainConfig& config);

/// Builds a config: preset, then the algorithm's baseline settings, then the
/// keys of json_text, then "key=value" overrides (values parsed as JSON when
/// possible, otherwise taken as strings). Unknown keys are rejected.
TrainConfig load_config(const std::string& preset, const std::string& json_text,
                        const std::vector<std::string>& overrides);
TrainConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides);

std::string to_json(const TrainConfig& config);

std::unique_ptr<Environment> make_environment(const TrainConfig& config);
NoiseSpec noise_spec(const TrainConfig& config, std::uint64_t seed);

}  // namespace tdr
