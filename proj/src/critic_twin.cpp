#include "tdr/critic_twin.hpp"

#include <algorithm>
#include <cmath>

#include "tdr/errors.hpp"

namespace tdr {

std::string to_string(TargetRule rule) { return rule == TargetRule::kDoubleQ ? "dq" : "tdr"; }

TargetRule target_rule_from_string(const std::string& name) {
  if (name == "dq") return TargetRule::kDoubleQ;
  if (name == "tdr") return TargetRule::kTdRegularized;
  throw ConfigError("critic_target_rule must be 'dq' or 'tdr', got '" + name + "'");
}

double dq_target(double r, double gamma, double q1_next, double q2_next) {
  return r + gamma * std::min(q1_next, q2_next);
}

TdErrorPair target_td_errors(double r, double gamma, TargetValues q1, TargetValues q2) {
  return {r + gamma * q1.next - q1.current, r + gamma * q2.next - q2.current};
}

TargetDecision tdr_target(double r, double gamma, TargetValues q1, TargetValues q2) {
  const TdErrorPair d = target_td_errors(r, gamma, q1, q2);
  TargetDecision out;
  out.delta1 = d.delta1;
  out.delta2 = d.delta2;
  if (std::abs(d.delta1) <= std::abs(d.delta2)) {
    out.chosen = 1;
    out.y = r + gamma * q1.next;
  } else {
    out.chosen = 2;
    out.y = r + gamma * q2.next;
  }
  return out;
}

Eigen::MatrixXd critic_input(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
  if (states.cols() != actions.cols()) throw ConfigError("critic_input: batch sizes differ");
  Eigen::MatrixXd x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

TwinCritic TwinCritic::create(int obs_dim, int action_dim, const std::vector<int>& hidden, double gamma, Rng& rng) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("critic gamma must lie in (0, 1)");
  std::vector<int> dims{obs_dim + action_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  TwinCritic c;
  c.q1 = Mlp::fan_in_uniform(dims, OutputHead::kLinear, rng);
  c.q2 = Mlp::fan_in_uniform(dims, OutputHead::kLinear, rng);
  c.q1_target = c.q1;
  c.q2_target = c.q2;
  c.gamma = gamma;
  return c;
}

std::vector<TargetDecision> TwinCritic::targets(const Batch& batch, const Eigen::MatrixXd& next_actions,
                                                TargetRule rule) const {
  const Eigen::MatrixXd next_in = critic_input(batch.next_states, next_actions);
  const Eigen::MatrixXd q1n = q1_target.forward(next_in);
  const Eigen::MatrixXd q2n = q2_target.forward(next_in);
  const Eigen::Index b = batch.size();
  std::vector<TargetDecision> out(static_cast<std::size_t>(b));
  if (rule == TargetRule::kDoubleQ) {
    for (Eigen::Index i = 0; i < b; ++i) {
      auto& d = out[static_cast<std::size_t>(i)];
      d.y = dq_target(batch.rewards(i), gamma, q1n(0, i), q2n(0, i));
      d.chosen = (q1n(0, i) <= q2n(0, i)) ? 1 : 2;
    }
    return out;
  }
  const Eigen::MatrixXd cur_in = critic_input(batch.states, batch.actions);
  const Eigen::MatrixXd q1c = q1_target.forward(cur_in);
  const Eigen::MatrixXd q2c = q2_target.forward(cur_in);
  for (Eigen::Index i = 0; i < b; ++i) {
    out[static_cast<std::size_t>(i)] =
        tdr_target(batch.rewards(i), gamma, {q1n(0, i), q1c(0, i)}, {q2n(0, i), q2c(0, i)});
  }
  return out;
}

void TwinCritic::soft_update_targets(double tau) {
  soft_update(q1_target, q1, tau);
  soft_update(q2_target, q2, tau);
}

CriticLossAndGrads critic_loss_and_grads(const Batch& batch, std::span<const double> y, const TwinCritic& critic) {
  const Eigen::Index b = batch.size();
  if (static_cast<Eigen::Index>(y.size()) != b) throw ConfigError("critic_loss_and_grads: one target per sample");
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("critic_loss_and_grads: non-finite target, batch rejected");
  }
  const Eigen::Map<const Eigen::RowVectorXd> targets(y.data(), b);
  const Eigen::MatrixXd input = critic_input(batch.states, batch.actions);
  ForwardCache c1, c2;
  const Eigen::MatrixXd q1 = critic.q1.forward(input, c1);
  const Eigen::MatrixXd q2 = critic.q2.forward(input, c2);
  const Eigen::RowVectorXd e1 = targets - q1.row(0);
  const Eigen::RowVectorXd e2 = targets - q2.row(0);
  const double inv_b = 1.0 / static_cast<double>(b);
  CriticLossAndGrads out;
  out.loss = (e1.squaredNorm() + e2.squaredNorm()) * inv_b;
  out.grad_q1 = critic.q1.backward(c1, (-2.0 * inv_b) * e1).grads;
  out.grad_q2 = critic.q2.backward(c2, (-2.0 * inv_b) * e2).grads;
  return out;
}

}  // namespace tdr
