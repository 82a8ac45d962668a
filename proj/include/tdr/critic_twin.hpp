#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdr/nn.hpp"
#include "tdr/replay.hpp"
#include "tdr/rng.hpp"

namespace tdr {

enum class TargetRule {
  kDoubleQ,        // bootstrap from the smaller target value
  kTdRegularized,  // bootstrap from the target network with the smaller |TD error|
};

std::string to_string(TargetRule rule);
TargetRule target_rule_from_string(const std::string& name);

/// Result of the target rule for one sample. chosen is 1 or 2.
struct TargetDecision {
  double y = 0.0;
  int chosen = 1;
  double delta1 = 0.0;
  double delta2 = 0.0;
};

struct TdErrorPair {
  double delta1 = 0.0;
  double delta2 = 0.0;
};

/// Values a target network assigns to (s_next, a_next) and to the stored (s, a).
struct TargetValues {
  double next = 0.0;
  double current = 0.0;
};

/// r + gamma * min(q1_next, q2_next).
double dq_target(double r, double gamma, double q1_next, double q2_next);

/// delta_z = r + gamma Q'_z(s_next, a_next) - Q'_z(s, a), each within its own network.
TdErrorPair target_td_errors(double r, double gamma, TargetValues q1, TargetValues q2);

/// Bootstraps from critic 1 when |delta1| <= |delta2|, otherwise from critic 2.
TargetDecision tdr_target(double r, double gamma, TargetValues q1, TargetValues q2);

/// Concatenates states (obs x B) over actions (act x B) into critic inputs.
Eigen::MatrixXd critic_input(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions);

/// Twin scalar Q networks over state||action with their target copies.
struct TwinCritic {
  Mlp q1, q2, q1_target, q2_target;
  double gamma = 0.99;

  /// Online networks get independent fan-in initializations; targets start as copies.
  static TwinCritic create(int obs_dim, int action_dim, const std::vector<int>& hidden, double gamma, Rng& rng);

  /// Per-sample targets for a batch. next_actions are the (smoothed) target-policy
  /// actions at batch.next_states. The double-Q rule leaves the deltas at zero.
  std::vector<TargetDecision> targets(const Batch& batch, const Eigen::MatrixXd& next_actions, TargetRule rule) const;

  void soft_update_targets(double tau);
};

struct CriticLossAndGrads {
  double loss = 0.0;
  GradientSet grad_q1;
  GradientSet grad_q2;
};

/// loss = mean_b sum_z (y_b - Q_z(s_b, a_b))^2 with y held constant.
/// Throws NumericError on non-finite targets.
CriticLossAndGrads critic_loss_and_grads(const Batch& batch, std::span<const double> y, const TwinCritic& critic);

}  // namespace tdr
