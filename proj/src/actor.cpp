#include "tdr/actor.hpp"

#include <cmath>

#include "tdr/errors.hpp"

namespace tdr {

std::string to_string(PenaltyMode mode) {
  return mode == PenaltyMode::kThroughBootstrap ? "through_bootstrap" : "detached_bootstrap";
}

PenaltyMode penalty_mode_from_string(const std::string& name) {
  if (name == "through_bootstrap") return PenaltyMode::kThroughBootstrap;
  if (name == "detached_bootstrap") return PenaltyMode::kDetachedBootstrap;
  throw ConfigError("penalty_mode must be 'through_bootstrap' or 'detached_bootstrap', got '" + name + "'");
}

void validate_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1), got " + std::to_string(rho));
}

Actor Actor::create(int obs_dim, int action_dim, const std::vector<int>& hidden, double action_bound, double rho,
                    PenaltyMode mode, Rng& rng) {
  validate_rho(rho);
  std::vector<int> dims{obs_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(action_dim);
  Actor a;
  a.pi = Mlp::fan_in_uniform(dims, OutputHead::kTanhScaled, rng, action_bound);
  a.pi_target = a.pi;
  a.rho = rho;
  a.mode = mode;
  return a;
}

GradientSet policy_vjp(const Mlp& pi, const Eigen::MatrixXd& states, const Eigen::MatrixXd& action_cotangent) {
  ForwardCache cache;
  pi.forward(states, cache);
  return pi.backward(cache, action_cotangent).grads;
}

namespace {

Eigen::MatrixXd hstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// Gradient of sum_b w_b Q1(x_b, pi(x_b)) over the columns of states.
GradientSet weighted_dpg(const Eigen::MatrixXd& states, const Eigen::RowVectorXd& weights, const Mlp& pi,
                         const Mlp& q1, Eigen::RowVectorXd* q_values) {
  ForwardCache pc, qc;
  const Eigen::MatrixXd actions = pi.forward(states, pc);
  const Eigen::MatrixXd q = q1.forward(critic_input(states, actions), qc);
  if (q_values != nullptr) *q_values = q.row(0);
  const Eigen::MatrixXd dx = q1.backward(qc, weights).input_cotangent;
  return pi.backward(pc, dx.bottomRows(actions.rows())).grads;
}

Eigen::RowVectorXd q1_on_policy(const Eigen::MatrixXd& states, const Actor& actor, const TwinCritic& critic) {
  const Eigen::MatrixXd a = actor.pi.forward(states);
  return critic.q1.forward(critic_input(states, a)).row(0);
}

void finish(ActorGradient& out) { out.diagnostics.grad_norm = std::sqrt(out.grad.squared_norm()); }

}  // namespace

GradientSet dpg_gradient(const Eigen::MatrixXd& states, const Actor& actor, const TwinCritic& critic) {
  const auto b = states.cols();
  const Eigen::RowVectorXd w = Eigen::RowVectorXd::Constant(b, 1.0 / static_cast<double>(b));
  return weighted_dpg(states, w, actor.pi, critic.q1, nullptr);
}

Eigen::RowVectorXd actor_td_error(const Batch& batch, const Actor& actor, const TwinCritic& critic) {
  const Eigen::RowVectorXd q = q1_on_policy(batch.states, actor, critic);
  const Eigen::RowVectorXd q_next = q1_on_policy(batch.next_states, actor, critic);
  return q - (batch.rewards.transpose() + critic.gamma * q_next);
}

double tdr_objective(const Batch& batch, const Actor& actor, const TwinCritic& critic) {
  const Eigen::RowVectorXd q = q1_on_policy(batch.states, actor, critic);
  const Eigen::RowVectorXd delta = actor_td_error(batch, actor, critic);
  return (q - actor.rho * delta).mean();
}

ActorGradient tdr_gradient(const Batch& batch, const Actor& actor, const TwinCritic& critic) {
  validate_rho(actor.rho);
  const auto b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  ActorGradient out;
  const Eigen::RowVectorXd delta = actor_td_error(batch, actor, critic);
  out.diagnostics.mean_delta = delta.mean();

  if (actor.rho == 0.0 || actor.mode == PenaltyMode::kDetachedBootstrap) {
    Eigen::RowVectorXd q;
    out.grad = weighted_dpg(batch.states, Eigen::RowVectorXd::Constant(b, inv_b), actor.pi, critic.q1, &q);
    if (actor.rho != 0.0) out.grad.scale(1.0 - actor.rho);
    out.diagnostics.mean_q = q.mean();
    finish(out);
    return out;
  }

  // (1 - rho) Q1(s, pi(s)) + rho gamma Q1(s', pi(s')) + const, one pass over [s, s'].
  Eigen::RowVectorXd w(2 * b);
  w.head(b).setConstant((1.0 - actor.rho) * inv_b);
  w.tail(b).setConstant(actor.rho * critic.gamma * inv_b);
  Eigen::RowVectorXd q;
  out.grad = weighted_dpg(hstack(batch.states, batch.next_states), w, actor.pi, critic.q1, &q);
  out.diagnostics.mean_q = q.head(b).mean();
  finish(out);
  return out;
}

namespace {

struct DistActorPass {
  Eigen::MatrixXd actions;  // act x 2B: policy actions at [s, s']
  ForwardCache policy_cache;
  ForwardCache critic_cache;
  Eigen::MatrixXd probs;     // atoms x 2B
  Eigen::MatrixXd log_probs;  // atoms x 2B
};

DistActorPass dist_forward(const Batch& batch, const Actor& actor, const DistTwinCritic& critic) {
  DistActorPass p;
  const Eigen::MatrixXd states = hstack(batch.states, batch.next_states);
  p.actions = actor.pi.forward(states, p.policy_cache);
  p.probs = critic.z1.forward(critic_input(states, p.actions), p.critic_cache);
  p.log_probs = log_softmax(p.critic_cache.pre_activations.back());
  return p;
}

std::vector<double> shifted_atoms(double r, const DistTwinCritic& critic) {
  std::vector<double> atoms(static_cast<std::size_t>(critic.support.size()));
  for (int i = 0; i < critic.support.size(); ++i) atoms[static_cast<std::size_t>(i)] = r + critic.gamma * critic.support.atom(i);
  return atoms;
}

double kl(const std::vector<double>& m, const Eigen::VectorXd& log_p) {
  double total = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (m[j] > 0.0) total += m[j] * (std::log(m[j]) - log_p(static_cast<Eigen::Index>(j)));
  }
  return total;
}

}  // namespace

double dist_tdr_objective(const Batch& batch, const Actor& actor, const DistTwinCritic& critic) {
  const auto b = batch.size();
  const DistActorPass p = dist_forward(batch, actor, critic);
  const Eigen::VectorXd z = critic.support.atoms();
  double total = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::VectorXd q_next = p.probs.col(b + k);
    const auto m = project(shifted_atoms(batch.rewards(k), critic), {q_next.data(), static_cast<std::size_t>(q_next.size())},
                           critic.support);
    total += z.dot(p.probs.col(k)) - actor.rho * kl(m.probs, p.log_probs.col(k));
  }
  return total / static_cast<double>(b);
}

ActorGradient dist_tdr_gradient(const Batch& batch, const Actor& actor, const DistTwinCritic& critic) {
  validate_rho(actor.rho);
  const auto b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  const int l = critic.support.size();
  const Eigen::VectorXd z = critic.support.atoms();
  const DistActorPass p = dist_forward(batch, actor, critic);

  // Cotangents with respect to the critic logits at [s, s'].
  Eigen::MatrixXd logit_cot = Eigen::MatrixXd::Zero(l, 2 * b);
  ActorGradient out;
  double q_sum = 0.0;
  double kl_sum = 0.0;
  const bool through = actor.rho != 0.0 && actor.mode == PenaltyMode::kThroughBootstrap;
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::VectorXd pk = p.probs.col(k);
    const double e = z.dot(pk);
    q_sum += e;
    logit_cot.col(k) = (pk.array() * (z.array() - e)).matrix();

    const Eigen::VectorXd qk = p.probs.col(b + k);
    const auto atoms = shifted_atoms(batch.rewards(k), critic);
    const auto m = project(atoms, {qk.data(), static_cast<std::size_t>(l)}, critic.support).probs;
    kl_sum += kl(m, p.log_probs.col(k));
    if (actor.rho == 0.0) continue;

    const Eigen::Map<const Eigen::VectorXd> mk(m.data(), l);
    logit_cot.col(k) -= actor.rho * (pk - mk);
    if (!through) continue;

    // d KL / d m_j = log m_j + 1 - log p_j on the support of m; m = P q with P fixed.
    Eigen::VectorXd g_m = Eigen::VectorXd::Zero(l);
    for (int j = 0; j < l; ++j) {
      if (m[static_cast<std::size_t>(j)] > 0.0) g_m(j) = std::log(m[static_cast<std::size_t>(j)]) + 1.0 - p.log_probs(j, k);
    }
    const auto entries = projection_entries(atoms, critic.support);
    Eigen::VectorXd g_q(l);
    for (int i = 0; i < l; ++i) {
      const auto& en = entries[static_cast<std::size_t>(i)];
      g_q(i) = en.lower_weight * g_m(en.lower) + en.upper_weight * g_m(en.upper);
    }
    g_q *= -actor.rho;
    logit_cot.col(b + k) = (qk.array() * (g_q.array() - g_q.dot(qk))).matrix();
  }
  logit_cot *= inv_b;

  const Eigen::MatrixXd dx = critic.z1.backward_pre_head(p.critic_cache, logit_cot).input_cotangent;
  const Eigen::MatrixXd action_cot = dx.bottomRows(p.actions.rows());
  if (through) {
    out.grad = actor.pi.backward(p.policy_cache, action_cot).grads;
  } else {
    ForwardCache pc;
    actor.pi.forward(batch.states, pc);
    out.grad = actor.pi.backward(pc, action_cot.leftCols(b)).grads;
  }
  out.diagnostics.mean_q = q_sum * inv_b;
  out.diagnostics.mean_delta = kl_sum * inv_b;
  finish(out);
  return out;
}

}  // namespace tdr
