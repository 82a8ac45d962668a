#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tdr/critic_twin.hpp"
#include "tdr/nn.hpp"
#include "tdr/replay.hpp"
#include "tdr/rng.hpp"

namespace tdr {

/// Evenly spaced return atoms on [v_min, v_max].
class Support {
 public:
  Support(double v_min, double v_max, int atoms);

  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  int size() const { return atoms_; }
  double spacing() const { return spacing_; }
  double atom(int i) const { return v_min_ + spacing_ * i; }
  Eigen::VectorXd atoms() const;

 private:
  double v_min_;
  double v_max_;
  int atoms_;
  double spacing_;
};

/// Probabilities over the atoms of a Support.
struct CategoricalDist {
  std::vector<double> probs;
};

double expected_value(std::span<const double> probs, const Support& support);

/// Where one source atom's mass lands on the support: split linearly between the
/// two neighbouring atoms, or entirely on one atom when it sits on the grid or
/// outside [v_min, v_max] (clamped).
struct ProjectionEntry {
  int lower = 0;
  int upper = 0;
  double lower_weight = 1.0;
  double upper_weight = 0.0;
};

std::vector<ProjectionEntry> projection_entries(std::span<const double> values, const Support& support);

/// Categorical projection of (values, probs) onto the support, normalized.
CategoricalDist project(std::span<const double> values, std::span<const double> probs, const Support& support);

/// Distributions a target network assigns to (s_next, a_next) and to the stored (s, a).
struct TargetDists {
  std::span<const double> next;
  std::span<const double> current;
};

/// d_z = r + gamma E[Z'_z(s_next, a_next)] - E[Z'_z(s, a)].
TdErrorPair dist_target_td_errors(double r, double gamma, TargetDists z1, TargetDists z2, const Support& support);

/// The selected target random variable r + gamma Z'_source(s_next, a_next), as
/// shifted atoms with the source network's probabilities (before projection).
struct DistTargetOperator {
  int source = 1;
  double d1 = 0.0;
  double d2 = 0.0;
  std::vector<double> atoms;
  std::vector<double> probs;
};

/// Selects Z'_1 when |d1| <= |d2|, otherwise Z'_2.
DistTargetOperator dtdr_target_operator(double r, double gamma, TargetDists z1, TargetDists z2,
                                        const Support& support);

struct DistTargets {
  Eigen::MatrixXd projected;  // atoms x B
  std::vector<int> source;
  std::vector<double> d1;
  std::vector<double> d2;
};

/// Twin categorical critics (softmax over the support atoms) with target copies.
struct DistTwinCritic {
  Mlp z1, z2, z1_target, z2_target;
  Support support{0.0, 100.0, 51};
  double gamma = 0.99;

  static DistTwinCritic create(int obs_dim, int action_dim, const std::vector<int>& hidden, const Support& support,
                               double gamma, Rng& rng);

  /// Projected targets for a batch. Under the double-Q rule the source is the
  /// target network with the smaller expected next value (ties go to 1).
  DistTargets targets(const Batch& batch, const Eigen::MatrixXd& next_actions, TargetRule rule) const;

  /// E[Z_1] of the online first critic for each column of (states, actions).
  Eigen::RowVectorXd expected_q1(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;

  void soft_update_targets(double tau);
};

struct DistCriticLossAndGrads {
  double loss = 0.0;  // mean_b sum_z cross-entropy(target || Z_z)
  double kl = 0.0;    // mean_b sum_z KL(target || Z_z)
  GradientSet grad_z1;
  GradientSet grad_z2;
};

/// Cross-entropy against the softmax outputs; it differs from KL by the target
/// entropy, which does not depend on the critic parameters.
DistCriticLossAndGrads dist_critic_loss_and_grads(const Batch& batch, const Eigen::MatrixXd& projected_targets,
                                                  const DistTwinCritic& critic);

/// Column-wise log-softmax of logits computed stably.
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits);

}  // namespace tdr
