#include "tdr/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "tdr/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tdr {

void write_metrics_header(std::ostream& out) {
  out << "step,eval_return_mean,eval_return_std,psi_estimate,critic_loss,actor_grad_norm,mean_delta,wall_seconds\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << std::setprecision(17) << r.step << ',' << r.eval_return_mean << ',' << r.eval_return_std << ','
      << r.psi_estimate << ',' << r.critic_loss << ',' << r.actor_grad_norm << ',' << r.mean_delta << ','
      << r.wall_seconds << '\n';
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  write_metrics_header(out);
  for (const auto& r : rows) write_metrics_row(out, r);
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics CSV is empty");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 8) throw ConfigError("metrics CSV row has " + std::to_string(v.size()) + " columns");
    rows.push_back({static_cast<std::int64_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return rows;
}

namespace {

std::optional<NoiseModel> eval_noise(const std::optional<NoiseSpec>& noise, std::uint64_t eval_seed) {
  if (!noise) return std::nullopt;
  NoiseSpec spec = *noise;
  spec.seed = Rng::stream(eval_seed, stream::kNoise).engine()();
  return NoiseModel(spec);
}

std::vector<double> agent_view(const std::vector<double>& obs, const std::vector<double>& range,
                               std::optional<NoiseModel>& noise) {
  return noise ? noise->perturb_observation(obs, range) : obs;
}

}  // namespace

EvalResult evaluate(const Actor& actor, const Environment& env, int n_episodes, std::uint64_t eval_seed,
                    const std::optional<NoiseSpec>& noise) {
  if (n_episodes < 1) throw ConfigError("evaluate: n_episodes must be >= 1");
  auto sim = env.clone();
  const auto range = sim->observation_range();
  Rng resets = Rng::stream(eval_seed, stream::kReset);
  auto nm = eval_noise(noise, eval_seed);
  EvalResult out;
  for (int ep = 0; ep < n_episodes; ++ep) {
    auto obs = agent_view(sim->reset(resets.engine()()).observation, range, nm);
    double total = 0.0;
    for (;;) {
      const auto a = actor.pi.forward(std::span<const double>(obs));
      const auto executed = nm ? nm->perturb_action(a) : a;
      const StepResult res = sim->step(executed);
      total += res.reward;
      obs = agent_view(res.next_observation, range, nm);
      if (res.done) break;
    }
    out.returns.push_back(total);
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean = sum / n_episodes;
  double var = 0.0;
  for (double r : out.returns) var += (r - out.mean) * (r - out.mean);
  out.std = std::sqrt(var / n_episodes);
  return out;
}

std::vector<PsiRollout> psi_rollouts(const Actor& actor, const ValueFn& value, const Environment& env,
                                     int n_rollouts, double gamma, std::uint64_t eval_seed,
                                     const std::optional<NoiseSpec>& noise) {
  if (n_rollouts < 1) throw ConfigError("psi_rollouts: n_rollouts must be >= 1");
  auto sim = env.clone();
  const auto range = sim->observation_range();
  Rng resets = Rng::stream(eval_seed, stream::kReset);
  auto nm = eval_noise(noise, eval_seed);
  std::vector<PsiRollout> out;
  for (int i = 0; i < n_rollouts; ++i) {
    PsiRollout roll;
    auto obs = agent_view(sim->reset(resets.engine()()).observation, range, nm);
    double discount = 1.0;
    bool first = true;
    for (;;) {
      const auto a = actor.pi.forward(std::span<const double>(obs));
      if (first) {
        roll.q_value = value(obs, a);
        first = false;
      }
      const auto executed = nm ? nm->perturb_action(a) : a;
      const StepResult res = sim->step(executed);
      roll.rewards.push_back(res.reward);
      roll.discounted_return += discount * res.reward;
      discount *= gamma;
      obs = agent_view(res.next_observation, range, nm);
      if (res.done) break;
    }
    out.push_back(std::move(roll));
  }
  return out;
}

double estimate_psi(const Actor& actor, const ValueFn& value, const Environment& env, int n_rollouts, double gamma,
                    std::uint64_t eval_seed, const std::optional<NoiseSpec>& noise) {
  const auto rolls = psi_rollouts(actor, value, env, n_rollouts, gamma, eval_seed, noise);
  double total = 0.0;
  for (const auto& r : rolls) total += r.discounted_return - r.q_value;
  return total / static_cast<double>(rolls.size());
}

namespace {

// Minibatch matrices sit just above glibc's default mmap threshold; keeping them
// on the heap avoids a map/unmap pair per allocation.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

Trainer::Trainer(TrainConfig config)
    : config_((validate(config), std::move(config))),
      env_(make_environment(config_)),
      eval_env_(env_->clone()),
      buffer_(config_.buffer_size, env_->observation_dim(), env_->action_dim()),
      window_(config_.lnss_n, config_.gamma),
      noise_(noise_spec(config_, Rng::stream(config_.seed, stream::kNoise).engine()())),
      explore_rng_(Rng::stream(config_.seed, stream::kExplore)),
      sample_rng_(Rng::stream(config_.seed, stream::kSample)),
      smooth_rng_(Rng::stream(config_.seed, stream::kSmooth)),
      reset_rng_(Rng::stream(config_.seed, stream::kReset)) {
  tune_allocator();
  const int obs_dim = env_->observation_dim();
  const int act_dim = env_->action_dim();
  Rng init = Rng::stream(config_.seed, stream::kInit);
  if (is_distributional(config_.algorithm)) {
    dist_ = DistTwinCritic::create(obs_dim, act_dim, config_.hidden,
                                   Support(config_.v_min, config_.v_max, config_.atoms), config_.gamma, init);
    critic1_opt_ = AdamState::for_network(dist_->z1, config_.critic_lr);
    critic2_opt_ = AdamState::for_network(dist_->z2, config_.critic_lr);
  } else {
    twin_ = TwinCritic::create(obs_dim, act_dim, config_.hidden, config_.gamma, init);
    critic1_opt_ = AdamState::for_network(twin_->q1, config_.critic_lr);
    critic2_opt_ = AdamState::for_network(twin_->q2, config_.critic_lr);
  }
  actor_ = Actor::create(obs_dim, act_dim, config_.hidden, 1.0, config_.rho, config_.penalty_mode, init);
  if (config_.init_scale != 1.0) rescale_init();
  actor_opt_ = AdamState::for_network(actor_.pi, config_.actor_lr);
  obs_range_ = env_->observation_range();
  obs_ = noise_.perturb_observation(env_->reset(reset_rng_.engine()()).observation, obs_range_);
}

void Trainer::rescale_init() {
  auto rescale = [&](Mlp& online, Mlp& target) {
    online.params().scale(config_.init_scale);
    target = online;
  };
  if (twin_) {
    rescale(twin_->q1, twin_->q1_target);
    rescale(twin_->q2, twin_->q2_target);
  } else {
    rescale(dist_->z1, dist_->z1_target);
    rescale(dist_->z2, dist_->z2_target);
  }
  rescale(actor_.pi, actor_.pi_target);
}

void Trainer::apply(Mlp& net, GradientSet& grad, AdamState& opt) const {
  if (config_.grad_clip_norm > 0.0) {
    const double norm = std::sqrt(grad.squared_norm());
    if (norm > config_.grad_clip_norm) grad.scale(config_.grad_clip_norm / norm);
  }
  adam_step(net, grad, opt);
}

void Trainer::step() {
  const int act_dim = env_->action_dim();
  std::vector<double> a(static_cast<std::size_t>(act_dim));
  if (t_ < config_.start_timesteps) {
    for (double& x : a) x = explore_rng_.uniform(-1.0, 1.0);
  } else {
    a = actor_.pi.forward(std::span<const double>(obs_));
    if (config_.exploration_noise > 0.0) {
      for (double& x : a) x = std::clamp(x + explore_rng_.normal(0.0, config_.exploration_noise), -1.0, 1.0);
    }
  }
  const auto executed = noise_.perturb_action(a);
  const StepResult res = env_->step(executed);
  auto next = noise_.perturb_observation(res.next_observation, obs_range_);
  const double r = noise_.perturb_reward(res.reward);
  push_raw(window_, buffer_, RawStep{obs_, a, r, next}, res.done);
  obs_ = std::move(next);
  const std::int64_t index = t_++;
  if (res.done) obs_ = noise_.perturb_observation(env_->reset(reset_rng_.engine()()).observation, obs_range_);

  if (index >= config_.start_timesteps) {
    if (auto batch = buffer_.sample(config_.batch_size, sample_rng_)) update(*batch);
  }
}

Eigen::MatrixXd Trainer::target_actions(const Batch& batch) {
  Eigen::MatrixXd a = actor_.pi_target.forward(batch.next_states);
  if (twin_ && config_.policy_noise > 0.0) {
    for (Eigen::Index b = 0; b < a.cols(); ++b) {
      for (Eigen::Index j = 0; j < a.rows(); ++j) {
        const double e = std::clamp(smooth_rng_.normal(0.0, config_.policy_noise), -config_.noise_clip, config_.noise_clip);
        a(j, b) = std::clamp(a(j, b) + e, -1.0, 1.0);
      }
    }
  }
  return a;
}

void Trainer::update(const Batch& batch) {
  ++critic_updates_;
  const Eigen::MatrixXd next_actions = target_actions(batch);
  double loss = 0.0;
  if (twin_) {
    const auto decisions = twin_->targets(batch, next_actions, config_.critic_target_rule);
    std::vector<double> y(decisions.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = decisions[i].y;
    auto lg = critic_loss_and_grads(batch, y, *twin_);
    loss = lg.loss;
    if (!std::isfinite(loss)) throw NumericError("critic loss is not finite");
    apply(twin_->q1, lg.grad_q1, critic1_opt_);
    apply(twin_->q2, lg.grad_q2, critic2_opt_);
  } else {
    const auto targets = dist_->targets(batch, next_actions, config_.critic_target_rule);
    auto lg = dist_critic_loss_and_grads(batch, targets.projected, *dist_);
    loss = lg.loss;
    if (!std::isfinite(loss)) throw NumericError("critic loss is not finite");
    apply(dist_->z1, lg.grad_z1, critic1_opt_);
    apply(dist_->z2, lg.grad_z2, critic2_opt_);
  }
  stats_.critic_updates += 1;
  stats_.critic_loss_sum += loss;

  if (critic_updates_ % config_.policy_update_frequency != 0) return;
  ActorGradient g = twin_ ? tdr_gradient(batch, actor_, *twin_) : dist_tdr_gradient(batch, actor_, *dist_);
  stats_.actor_updates += 1;
  stats_.grad_norm_sum += g.diagnostics.grad_norm;
  stats_.delta_sum += g.diagnostics.mean_delta;
  g.grad.scale(-1.0);
  apply(actor_.pi, g.grad, actor_opt_);
  if (twin_) {
    twin_->soft_update_targets(config_.tau);
  } else {
    dist_->soft_update_targets(config_.tau);
  }
  actor_.soft_update_target(config_.tau);
}

ValueFn Trainer::value_fn() const {
  if (twin_) {
    const Mlp* q1 = &twin_->q1;
    return [q1](const std::vector<double>& s, const std::vector<double>& a) {
      std::vector<double> x(s);
      x.insert(x.end(), a.begin(), a.end());
      return q1->forward(std::span<const double>(x))[0];
    };
  }
  const DistTwinCritic* d = &*dist_;
  return [d](const std::vector<double>& s, const std::vector<double>& a) {
    std::vector<double> x(s);
    x.insert(x.end(), a.begin(), a.end());
    const auto p = d->z1.forward(std::span<const double>(x));
    return expected_value(p, d->support);
  };
}

MetricsRow Trainer::evaluation_row() {
  const std::uint64_t eval_seed = config_.seed + 100;
  const auto spec = noise_spec(config_, 0);
  const std::optional<NoiseSpec> noise = spec.any() ? std::optional<NoiseSpec>(spec) : std::nullopt;
  MetricsRow row;
  row.step = t_;
  const EvalResult ev = evaluate(actor_, *eval_env_, config_.eval_episodes, eval_seed, noise);
  row.eval_return_mean = ev.mean;
  row.eval_return_std = ev.std;
  row.psi_estimate = estimate_psi(actor_, value_fn(), *eval_env_, config_.psi_rollouts, config_.gamma, eval_seed, noise);
  if (stats_.critic_updates > 0) row.critic_loss = stats_.critic_loss_sum / static_cast<double>(stats_.critic_updates);
  if (stats_.actor_updates > 0) {
    row.actor_grad_norm = stats_.grad_norm_sum / static_cast<double>(stats_.actor_updates);
    row.mean_delta = stats_.delta_sum / static_cast<double>(stats_.actor_updates);
  }
  stats_ = UpdateStats{};
  return row;
}

void Trainer::save_checkpoints(const std::string& dir, const std::string& prefix) const {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  save_checkpoint((base / (prefix + "actor.ckpt")).string(), actor_.pi);
  save_checkpoint((base / (prefix + "actor_target.ckpt")).string(), actor_.pi_target);
  if (twin_) {
    save_checkpoint((base / (prefix + "critic1.ckpt")).string(), twin_->q1);
    save_checkpoint((base / (prefix + "critic2.ckpt")).string(), twin_->q2);
  } else {
    save_checkpoint((base / (prefix + "critic1.ckpt")).string(), dist_->z1);
    save_checkpoint((base / (prefix + "critic2.ckpt")).string(), dist_->z2);
  }
}

TrainResult run_training(const TrainConfig& config, const std::string& output_dir) {
  Trainer trainer(config);
  const auto started = std::chrono::steady_clock::now();
  std::ofstream csv;
  if (!output_dir.empty()) {
    std::filesystem::create_directories(output_dir);
    std::ofstream(std::filesystem::path(output_dir) / "config.json") << to_json(config) << '\n';
    csv.open(std::filesystem::path(output_dir) / "metrics.csv");
    if (!csv) throw ConfigError("cannot write metrics.csv in '" + output_dir + "'");
    write_metrics_header(csv);
  }
  TrainResult result;
  auto record = [&] {
    MetricsRow row = trainer.evaluation_row();
    if (config.log_wall_time) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    if (csv.is_open()) {
      write_metrics_row(csv, row);
      csv.flush();
    }
    result.rows.push_back(row);
  };
  try {
    record();
    while (trainer.timestep() < config.max_timesteps) {
      trainer.step();
      if (trainer.timestep() % config.eval_frequency == 0) record();
    }
  } catch (const NumericError&) {
    if (!output_dir.empty()) trainer.save_checkpoints(output_dir, "abort_");
    throw;
  }
  if (!output_dir.empty() && config.save_checkpoints) trainer.save_checkpoints(output_dir);
  result.final_return = result.rows.back().eval_return_mean;
  result.success = result.final_return >= config.success_threshold;
  return result;
}

std::string output_dir_from_env(const std::string& fallback) {
  const char* dir = std::getenv("TDR_OUTPUT_DIR");
  return dir != nullptr && *dir != '\0' ? std::string(dir) : fallback;
}

std::vector<SweepRow> aggregate_sweep(const std::vector<SweepCell>& cells) {
  std::vector<double> rho_order;
  for (const auto& c : cells) {
    if (std::find(rho_order.begin(), rho_order.end(), c.rho) == rho_order.end()) rho_order.push_back(c.rho);
  }
  std::vector<SweepRow> rows;
  for (double rho : rho_order) {
    std::map<std::int64_t, std::pair<std::vector<double>, std::vector<double>>> by_step;
    for (const auto& c : cells) {
      if (c.rho != rho || !c.ok) continue;
      for (const auto& r : c.result.rows) {
        by_step[r.step].first.push_back(r.eval_return_mean);
        by_step[r.step].second.push_back(r.psi_estimate);
      }
    }
    for (const auto& [step, values] : by_step) {
      auto stats = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        return std::pair{m, std::sqrt(var / static_cast<double>(v.size()))};
      };
      const auto [rm, rs] = stats(values.first);
      const auto [pm, ps] = stats(values.second);
      rows.push_back({rho, step, static_cast<int>(values.first.size()), rm, rm - 2.0 * rs, rm + 2.0 * rs, pm,
                      pm - 2.0 * ps, pm + 2.0 * ps});
    }
  }
  return rows;
}

SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& rhos,
                      const std::vector<std::uint64_t>& seeds, unsigned workers, const std::string& output_dir) {
  if (rhos.empty() || seeds.empty()) throw ConfigError("sweep needs at least one rho and one seed");
  for (double rho : rhos) validate_rho(rho);
  SweepResult sweep;
  for (double rho : rhos) {
    for (auto seed : seeds) sweep.cells.push_back({rho, seed, false, "", {}});
  }
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(sweep.cells.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sweep.cells.size(); i = next++) {
      SweepCell& cell = sweep.cells[i];
      try {
        TrainConfig c = base;
        c.rho = cell.rho;
        c.seed = cell.seed;
        std::string dir;
        if (!output_dir.empty()) {
          std::ostringstream name;
          name << "rho_" << cell.rho << "/seed_" << cell.seed;
          dir = (std::filesystem::path(output_dir) / name.str()).string();
        }
        cell.result = run_training(c, dir);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  sweep.rows = aggregate_sweep(sweep.cells);
  return sweep;
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  out << "rho,step,runs,return_mean,return_lo,return_hi,psi_mean,psi_lo,psi_hi\n" << std::setprecision(17);
  for (const auto& r : sweep.rows) {
    out << r.rho << ',' << r.step << ',' << r.runs << ',' << r.return_mean << ',' << r.return_lo << ','
        << r.return_hi << ',' << r.psi_mean << ',' << r.psi_lo << ',' << r.psi_hi << '\n';
  }
}

void write_sweep_cells_csv(std::ostream& out, const SweepResult& sweep) {
  out << "rho,seed,status,final_return,success,error\n" << std::setprecision(17);
  for (const auto& c : sweep.cells) {
    std::string error = c.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << c.rho << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ',' << (c.ok ? c.result.final_return : 0.0)
        << ',' << (c.ok && c.result.success ? 1 : 0) << ',' << error << '\n';
  }
}

}  // namespace tdr
