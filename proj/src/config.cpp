#include "tdr/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tdr/errors.hpp"

namespace tdr {

using nlohmann::json;

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kTd3: return "td3";
    case Algorithm::kTd3Tdr: return "td3_tdr";
    case Algorithm::kD4pg: return "d4pg";
    case Algorithm::kD4pgTdr: return "d4pg_tdr";
  }
  return "td3";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "td3") return Algorithm::kTd3;
  if (name == "td3_tdr") return Algorithm::kTd3Tdr;
  if (name == "d4pg") return Algorithm::kD4pg;
  if (name == "d4pg_tdr") return Algorithm::kD4pgTdr;
  throw ConfigError("algorithm must be one of td3, td3_tdr, d4pg, d4pg_tdr; got '" + name + "'");
}

bool is_distributional(Algorithm algorithm) {
  return algorithm == Algorithm::kD4pg || algorithm == Algorithm::kD4pgTdr;
}

bool is_baseline(Algorithm algorithm) { return algorithm == Algorithm::kTd3 || algorithm == Algorithm::kD4pg; }

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "full") {
    c.horizon = 1000;
    c.max_timesteps = 1000000;
    c.start_timesteps = 8000;
    c.eval_frequency = 10000;
    c.buffer_size = 1000000;
    c.hidden = {256, 256};
    c.lnss_n = 100;
    c.v_max = 100.0;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

namespace {

json to_object(const TrainConfig& c) {
  return json{
      {"algorithm", to_string(c.algorithm)},
      {"env", c.env},
      {"sparse", c.sparse},
      {"sparse_threshold", c.sparse_threshold},
      {"horizon", c.horizon},
      {"pendulum_torque_bound", c.pendulum_torque_bound},
      {"pendulum_damping", c.pendulum_damping},
      {"cartpole_force_bound", c.cartpole_force_bound},
      {"state_noise", c.state_noise},
      {"action_noise", c.action_noise},
      {"reward_noise", c.reward_noise},
      {"seed", c.seed},
      {"max_timesteps", c.max_timesteps},
      {"start_timesteps", c.start_timesteps},
      {"eval_frequency", c.eval_frequency},
      {"eval_episodes", c.eval_episodes},
      {"psi_rollouts", c.psi_rollouts},
      {"success_threshold", c.success_threshold},
      {"batch_size", c.batch_size},
      {"buffer_size", c.buffer_size},
      {"hidden", c.hidden},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"gamma", c.gamma},
      {"tau", c.tau},
      {"policy_update_frequency", c.policy_update_frequency},
      {"exploration_noise", c.exploration_noise},
      {"policy_noise", c.policy_noise},
      {"noise_clip", c.noise_clip},
      {"init_scale", c.init_scale},
      {"grad_clip_norm", c.grad_clip_norm},
      {"lnss_n", c.lnss_n},
      {"rho", c.rho},
      {"penalty_mode", to_string(c.penalty_mode)},
      {"critic_target_rule", to_string(c.critic_target_rule)},
      {"critic_kind", is_distributional(c.algorithm) ? "distributional_twin" : "scalar_twin"},
      {"v_min", c.v_min},
      {"v_max", c.v_max},
      {"atoms", c.atoms},
      {"log_wall_time", c.log_wall_time},
      {"save_checkpoints", c.save_checkpoints},
  };
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

TrainConfig from_object(const json& j) {
  TrainConfig c;
  c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  read(j, "env", c.env);
  read(j, "sparse", c.sparse);
  read(j, "sparse_threshold", c.sparse_threshold);
  read(j, "horizon", c.horizon);
  read(j, "pendulum_torque_bound", c.pendulum_torque_bound);
  read(j, "pendulum_damping", c.pendulum_damping);
  read(j, "cartpole_force_bound", c.cartpole_force_bound);
  read(j, "state_noise", c.state_noise);
  read(j, "action_noise", c.action_noise);
  read(j, "reward_noise", c.reward_noise);
  read(j, "seed", c.seed);
  read(j, "max_timesteps", c.max_timesteps);
  read(j, "start_timesteps", c.start_timesteps);
  read(j, "eval_frequency", c.eval_frequency);
  read(j, "eval_episodes", c.eval_episodes);
  read(j, "psi_rollouts", c.psi_rollouts);
  read(j, "success_threshold", c.success_threshold);
  read(j, "batch_size", c.batch_size);
  read(j, "buffer_size", c.buffer_size);
  read(j, "hidden", c.hidden);
  read(j, "actor_lr", c.actor_lr);
  read(j, "critic_lr", c.critic_lr);
  read(j, "gamma", c.gamma);
  read(j, "tau", c.tau);
  read(j, "policy_update_frequency", c.policy_update_frequency);
  read(j, "exploration_noise", c.exploration_noise);
  read(j, "policy_noise", c.policy_noise);
  read(j, "noise_clip", c.noise_clip);
  read(j, "init_scale", c.init_scale);
  read(j, "grad_clip_norm", c.grad_clip_norm);
  read(j, "lnss_n", c.lnss_n);
  read(j, "rho", c.rho);
  c.penalty_mode = penalty_mode_from_string(j.at("penalty_mode").get<std::string>());
  c.critic_target_rule = target_rule_from_string(j.at("critic_target_rule").get<std::string>());
  const std::string kind = j.at("critic_kind").get<std::string>();
  if (kind != (is_distributional(c.algorithm) ? "distributional_twin" : "scalar_twin")) {
    throw ConfigError("critic_kind '" + kind + "' does not match algorithm " + to_string(c.algorithm));
  }
  read(j, "v_min", c.v_min);
  read(j, "v_max", c.v_max);
  read(j, "atoms", c.atoms);
  read(j, "log_wall_time", c.log_wall_time);
  read(j, "save_checkpoints", c.save_checkpoints);
  return c;
}

void merge_key(json& base, const std::string& key, const json& value) {
  if (!base.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  base[key] = value;
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.env == "pendulum" || c.env == "cartpole", "env must be pendulum or cartpole");
  require(c.sparse_threshold > -1.0 && c.sparse_threshold < 1.0, "sparse_threshold must lie in (-1, 1)");
  require(c.horizon >= 1, "horizon must be >= 1");
  require(c.pendulum_torque_bound > 0.0, "pendulum_torque_bound must be positive");
  require(c.pendulum_damping >= 0.0, "pendulum_damping must be non-negative");
  require(c.cartpole_force_bound > 0.0, "cartpole_force_bound must be positive");
  for (double f : {c.state_noise, c.action_noise, c.reward_noise}) {
    require(f >= 0.0 && f < 1.0, "noise fractions must lie in [0, 1)");
  }
  require(c.max_timesteps >= 0, "max_timesteps must be >= 0");
  require(c.start_timesteps >= 0, "start_timesteps must be >= 0");
  require(c.eval_frequency >= 1, "eval_frequency must be >= 1");
  require(c.eval_episodes >= 1, "eval_episodes must be >= 1");
  require(c.psi_rollouts >= 1, "psi_rollouts must be >= 1");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.buffer_size >= 1, "buffer_size must be >= 1");
  for (int h : c.hidden) require(h >= 1, "hidden widths must be positive");
  require(c.actor_lr > 0.0 && c.critic_lr > 0.0, "learning rates must be positive");
  require(c.gamma > 0.0 && c.gamma < 1.0, "gamma must lie in (0, 1)");
  require(c.tau > 0.0 && c.tau <= 1.0, "tau must lie in (0, 1]");
  require(c.policy_update_frequency >= 1, "policy_update_frequency must be >= 1");
  require(c.exploration_noise >= 0.0 && c.policy_noise >= 0.0 && c.noise_clip >= 0.0,
          "exploration and smoothing noise must be non-negative");
  require(c.init_scale > 0.0, "init_scale must be positive");
  require(c.grad_clip_norm >= 0.0, "grad_clip_norm must be non-negative (0 disables clipping)");
  require(c.lnss_n >= 1, "lnss_n must be >= 1");
  validate_rho(c.rho);
  require(c.v_max > c.v_min, "v_max must exceed v_min");
  require(c.atoms >= 2, "atoms must be >= 2");
  if (is_baseline(c.algorithm)) {
    require(c.rho == 0.0 && c.critic_target_rule == TargetRule::kDoubleQ && c.lnss_n == 1,
            to_string(c.algorithm) + " is the unregularized baseline: rho = 0, critic_target_rule = dq, lnss_n = 1");
  }
}

TrainConfig load_config(const std::string& preset, const std::string& json_text,
                        const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!json_text.empty()) {
    try {
      user = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + item + "'");
    user[item.substr(0, eq)] = parse_override_value(item.substr(eq + 1));
  }

  TrainConfig base = preset_config(preset);
  if (user.contains("algorithm")) {
    if (!user["algorithm"].is_string()) throw ConfigError("algorithm must be a string");
    base.algorithm = algorithm_from_string(user["algorithm"].get<std::string>());
  }
  if (is_baseline(base.algorithm)) {
    base.rho = 0.0;
    base.critic_target_rule = TargetRule::kDoubleQ;
    base.lnss_n = 1;
  }
  json merged = to_object(base);
  for (const auto& [key, value] : user.items()) merge_key(merged, key, value);
  TrainConfig out = from_object(merged);
  validate(out);
  return out;
}

TrainConfig load_config_file(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = [&] {
    try {
      return json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }();
  std::string preset = "desk";
  json body = j;
  if (body.is_object() && body.contains("preset")) {
    preset = body["preset"].get<std::string>();
    body.erase("preset");
  }
  return load_config(preset, body.dump(), overrides);
}

std::string to_json(const TrainConfig& config) { return to_object(config).dump(2); }

std::unique_ptr<Environment> make_environment(const TrainConfig& c) {
  std::unique_ptr<Environment> env;
  if (c.env == "pendulum") {
    PendulumParams p;
    p.torque_bound = c.pendulum_torque_bound;
    p.damping = c.pendulum_damping;
    p.horizon = c.horizon;
    env = std::make_unique<Pendulum>(p);
  } else if (c.env == "cartpole") {
    CartPoleParams p;
    p.force_bound = c.cartpole_force_bound;
    p.horizon = c.horizon;
    env = std::make_unique<CartPole>(p);
  } else {
    throw ConfigError("env must be pendulum or cartpole");
  }
  if (c.sparse) env = sparsify(std::move(env), c.sparse_threshold);
  return env;
}

NoiseSpec noise_spec(const TrainConfig& c, std::uint64_t seed) {
  NoiseSpec s;
  s.state_frac = c.state_noise;
  s.action_frac = c.action_noise;
  s.reward_frac = c.reward_noise;
  s.seed = seed;
  return s;
}

}  // namespace tdr
