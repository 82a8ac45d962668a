#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdr/actor.hpp"
#include "tdr/config.hpp"
#include "tdr/critic_dist.hpp"
#include "tdr/critic_twin.hpp"
#include "tdr/envs.hpp"
#include "tdr/nn.hpp"
#include "tdr/replay.hpp"
#include "tdr/rng.hpp"

namespace tdr {

/// Tags of the independent random streams of a run, each Rng::stream(seed, tag).
namespace stream {
inline constexpr std::uint64_t kInit = 1;     // critic then actor initialization
inline constexpr std::uint64_t kExplore = 2;  // warm-up actions and exploration noise
inline constexpr std::uint64_t kSample = 3;   // minibatch indices
inline constexpr std::uint64_t kSmooth = 4;   // target policy smoothing
inline constexpr std::uint64_t kReset = 5;    // episode reset seeds
inline constexpr std::uint64_t kNoise = 6;    // perturbation model seed
}  // namespace stream

struct MetricsRow {
  std::int64_t step = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double psi_estimate = 0.0;
  double critic_loss = 0.0;
  double actor_grad_norm = 0.0;
  double mean_delta = 0.0;
  double wall_seconds = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<double> returns;
};

/// Runs the deterministic policy for n_episodes without exploration noise or
/// updates and returns statistics of the undiscounted episode returns. Episode i
/// resets with the i-th draw of Rng::stream(eval_seed, stream::kReset); when
/// noise is given it is re-seeded from eval_seed so repeated calls agree.
EvalResult evaluate(const Actor& actor, const Environment& env, int n_episodes, std::uint64_t eval_seed,
                    const std::optional<NoiseSpec>& noise = std::nullopt);

/// Value the critic assigns to (s0, a0).
using ValueFn = std::function<double(const std::vector<double>&, const std::vector<double>&)>;

struct PsiRollout {
  std::vector<double> rewards;  // pre-noise rewards along the rollout
  double discounted_return = 0.0;
  double q_value = 0.0;
};

std::vector<PsiRollout> psi_rollouts(const Actor& actor, const ValueFn& value, const Environment& env,
                                     int n_rollouts, double gamma, std::uint64_t eval_seed,
                                     const std::optional<NoiseSpec>& noise = std::nullopt);

/// mean over rollouts of (sum_t gamma^t r_t - Q(s0, a0)). Positive means the
/// critic underestimates the rollout return.
double estimate_psi(const Actor& actor, const ValueFn& value, const Environment& env, int n_rollouts, double gamma,
                    std::uint64_t eval_seed, const std::optional<NoiseSpec>& noise = std::nullopt);

/// Statistics of the updates since the last evaluation row.
struct UpdateStats {
  std::int64_t critic_updates = 0;
  std::int64_t actor_updates = 0;
  double critic_loss_sum = 0.0;
  double grad_norm_sum = 0.0;
  double delta_sum = 0.0;
};

/// One run of the configured algorithm, advanced one environment step at a time.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  std::int64_t timestep() const { return t_; }
  std::int64_t critic_updates() const { return critic_updates_; }

  /// Interacts once, stores via LNSS and, after warm-up, performs one update.
  void step();
  /// One critic update and, every policy_update_frequency calls, one actor
  /// update followed by the target updates.
  void update(const Batch& batch);

  MetricsRow evaluation_row();

  const Actor& actor() const { return actor_; }
  const TwinCritic& twin() const { return *twin_; }
  const DistTwinCritic& dist() const { return *dist_; }
  bool distributional() const { return dist_.has_value(); }
  const ReplayBuffer& buffer() const { return buffer_; }
  ValueFn value_fn() const;

  void save_checkpoints(const std::string& dir, const std::string& prefix = "") const;

 private:
  Eigen::MatrixXd target_actions(const Batch& batch);
  void rescale_init();
  void apply(Mlp& net, GradientSet& grad, AdamState& opt) const;

  TrainConfig config_;
  std::unique_ptr<Environment> env_;
  std::unique_ptr<Environment> eval_env_;
  Actor actor_;
  std::optional<TwinCritic> twin_;
  std::optional<DistTwinCritic> dist_;
  AdamState actor_opt_;
  AdamState critic1_opt_;
  AdamState critic2_opt_;
  ReplayBuffer buffer_;
  LnssWindow window_;
  NoiseModel noise_;
  Rng explore_rng_;
  Rng sample_rng_;
  Rng smooth_rng_;
  Rng reset_rng_;
  std::vector<double> obs_;
  std::vector<double> obs_range_;
  std::int64_t t_ = 0;
  std::int64_t critic_updates_ = 0;
  UpdateStats stats_;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  double final_return = 0.0;
  bool success = false;  // final evaluation return >= success_threshold
};

/// Full run. Writes metrics.csv and final checkpoints into output_dir when it
/// is non-empty. On a numeric failure, writes abort_* checkpoints and rethrows.
TrainResult run_training(const TrainConfig& config, const std::string& output_dir = "");

/// Output directory from TDR_OUTPUT_DIR, or fallback when unset.
std::string output_dir_from_env(const std::string& fallback);

struct SweepCell {
  double rho = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainResult result;
};

struct SweepRow {
  double rho = 0.0;
  std::int64_t step = 0;
  int runs = 0;
  double return_mean = 0.0;
  double return_lo = 0.0;  // mean - 2 sigma
  double return_hi = 0.0;  // mean + 2 sigma
  double psi_mean = 0.0;
  double psi_lo = 0.0;
  double psi_hi = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

/// Independent runs for every (rho, seed) on up to `workers` threads, then per-rho
/// aggregation across seeds at each evaluation step (population sigma over
/// completed cells). Failed cells are kept with their error and skipped.
SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& rhos,
                      const std::vector<std::uint64_t>& seeds, unsigned workers = 0,
                      const std::string& output_dir = "");

std::vector<SweepRow> aggregate_sweep(const std::vector<SweepCell>& cells);
void write_sweep_csv(std::ostream& out, const SweepResult& sweep);
/// One line per (rho, seed) cell, including failed ones and their errors.
void write_sweep_cells_csv(std::ostream& out, const SweepResult& sweep);

}  // namespace tdr
