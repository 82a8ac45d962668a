#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdr/critic_dist.hpp"
#include "tdr/critic_twin.hpp"
#include "tdr/nn.hpp"
#include "tdr/replay.hpp"
#include "tdr/rng.hpp"

namespace tdr {

/// Whether the penalty's bootstrap term Q1(s', pi(s')) is differentiated through the policy.
enum class PenaltyMode {
  kThroughBootstrap,
  kDetachedBootstrap,  // reduces the regularized gradient to (1 - rho) * DPG
};

std::string to_string(PenaltyMode mode);
PenaltyMode penalty_mode_from_string(const std::string& name);

/// Deterministic tanh-bounded policy with its target copy.
struct Actor {
  Mlp pi;
  Mlp pi_target;
  double rho = 0.7;
  PenaltyMode mode = PenaltyMode::kThroughBootstrap;

  /// Throws ConfigError unless 0 <= rho < 1.
  static Actor create(int obs_dim, int action_dim, const std::vector<int>& hidden, double action_bound, double rho,
                      PenaltyMode mode, Rng& rng);

  Eigen::MatrixXd act(const Eigen::MatrixXd& states) const { return pi.forward(states); }
  void soft_update_target(double tau) { soft_update(pi_target, pi, tau); }
};

void validate_rho(double rho);

struct ActorDiagnostics {
  double mean_q = 0.0;
  double mean_delta = 0.0;  // mean TD error (scalar) or mean L_z (distributional)
  double grad_norm = 0.0;
};

/// Ascent direction of the actor objective with respect to the policy parameters.
struct ActorGradient {
  GradientSet grad;
  ActorDiagnostics diagnostics;
};

/// Pulls action cotangents (act x B) back through the policy: the gradient of
/// sum_b <cot_b, pi(s_b)> with respect to the policy parameters.
GradientSet policy_vjp(const Mlp& pi, const Eigen::MatrixXd& states, const Eigen::MatrixXd& action_cotangent);

/// Gradient of mean_b Q1(s_b, pi(s_b)).
GradientSet dpg_gradient(const Eigen::MatrixXd& states, const Actor& actor, const TwinCritic& critic);

/// Delta_b = Q1(s_b, pi(s_b)) - (r_b + gamma Q1(s'_b, pi(s'_b))) with the online critic and policy.
Eigen::RowVectorXd actor_td_error(const Batch& batch, const Actor& actor, const TwinCritic& critic);

/// Gradient of mean_b [Q1(s_b, pi(s_b)) - rho Delta_b]. With rho = 0 this is dpg_gradient.
ActorGradient tdr_gradient(const Batch& batch, const Actor& actor, const TwinCritic& critic);

/// Gradient of mean_b [E Z1(s_b, pi(s_b)) - rho L_b] where
/// L_b = KL(project(r_b + gamma Z1(s'_b, pi(s'_b))) || Z1(s_b, pi(s_b))).
ActorGradient dist_tdr_gradient(const Batch& batch, const Actor& actor, const DistTwinCritic& critic);

/// The objective dist_tdr_gradient differentiates (mean over the batch).
double dist_tdr_objective(const Batch& batch, const Actor& actor, const DistTwinCritic& critic);

/// The objective tdr_gradient differentiates (through-bootstrap reading).
double tdr_objective(const Batch& batch, const Actor& actor, const TwinCritic& critic);

}  // namespace tdr
