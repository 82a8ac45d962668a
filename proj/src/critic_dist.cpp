#include "tdr/critic_dist.hpp"

#include <algorithm>
#include <cmath>

#include "tdr/errors.hpp"

namespace tdr {

Support::Support(double v_min, double v_max, int atoms) : v_min_(v_min), v_max_(v_max), atoms_(atoms) {
  if (atoms < 2) throw ConfigError("support needs at least two atoms");
  if (!(v_max > v_min)) throw ConfigError("support requires v_max > v_min");
  spacing_ = (v_max - v_min) / (atoms - 1);
}

Eigen::VectorXd Support::atoms() const {
  Eigen::VectorXd z(atoms_);
  for (int i = 0; i < atoms_; ++i) z(i) = atom(i);
  return z;
}

double expected_value(std::span<const double> probs, const Support& support) {
  if (static_cast<int>(probs.size()) != support.size()) throw ConfigError("expected_value: size mismatch");
  double total = 0.0;
  for (int i = 0; i < support.size(); ++i) total += probs[static_cast<std::size_t>(i)] * support.atom(i);
  return total;
}

std::vector<ProjectionEntry> projection_entries(std::span<const double> values, const Support& support) {
  std::vector<ProjectionEntry> entries;
  entries.reserve(values.size());
  const int last = support.size() - 1;
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("project: non-finite target atom");
    const double clamped = std::clamp(v, support.v_min(), support.v_max());
    const double pos = (clamped - support.v_min()) / support.spacing();
    ProjectionEntry e;
    e.lower = std::clamp(static_cast<int>(std::floor(pos)), 0, last);
    e.upper = std::min(e.lower + 1, last);
    const double frac = pos - e.lower;
    if (e.upper == e.lower || frac <= 0.0) {
      e.upper = e.lower;
      e.lower_weight = 1.0;
      e.upper_weight = 0.0;
    } else {
      e.lower_weight = 1.0 - frac;
      e.upper_weight = frac;
    }
    entries.push_back(e);
  }
  return entries;
}

CategoricalDist project(std::span<const double> values, std::span<const double> probs, const Support& support) {
  if (values.size() != probs.size()) throw ConfigError("project: atoms and probabilities differ in length");
  const auto entries = projection_entries(values, support);
  CategoricalDist out{std::vector<double>(static_cast<std::size_t>(support.size()), 0.0)};
  double total = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    out.probs[static_cast<std::size_t>(e.lower)] += probs[i] * e.lower_weight;
    out.probs[static_cast<std::size_t>(e.upper)] += probs[i] * e.upper_weight;
    total += probs[i];
  }
  if (total > 0.0) {
    for (double& p : out.probs) p /= total;
  }
  return out;
}

TdErrorPair dist_target_td_errors(double r, double gamma, TargetDists z1, TargetDists z2, const Support& support) {
  return target_td_errors(r, gamma, {expected_value(z1.next, support), expected_value(z1.current, support)},
                          {expected_value(z2.next, support), expected_value(z2.current, support)});
}

DistTargetOperator dtdr_target_operator(double r, double gamma, TargetDists z1, TargetDists z2,
                                        const Support& support) {
  const TdErrorPair d = dist_target_td_errors(r, gamma, z1, z2, support);
  DistTargetOperator out;
  out.d1 = d.delta1;
  out.d2 = d.delta2;
  out.source = std::abs(d.delta1) <= std::abs(d.delta2) ? 1 : 2;
  const auto chosen = out.source == 1 ? z1.next : z2.next;
  out.probs.assign(chosen.begin(), chosen.end());
  out.atoms.resize(static_cast<std::size_t>(support.size()));
  for (int i = 0; i < support.size(); ++i) out.atoms[static_cast<std::size_t>(i)] = r + gamma * support.atom(i);
  return out;
}

DistTwinCritic DistTwinCritic::create(int obs_dim, int action_dim, const std::vector<int>& hidden,
                                      const Support& support, double gamma, Rng& rng) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("critic gamma must lie in (0, 1)");
  std::vector<int> dims{obs_dim + action_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(support.size());
  DistTwinCritic c;
  c.z1 = Mlp::fan_in_uniform(dims, OutputHead::kSoftmax, rng);
  c.z2 = Mlp::fan_in_uniform(dims, OutputHead::kSoftmax, rng);
  c.z1_target = c.z1;
  c.z2_target = c.z2;
  c.support = support;
  c.gamma = gamma;
  return c;
}

namespace {

std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

DistTargets DistTwinCritic::targets(const Batch& batch, const Eigen::MatrixXd& next_actions, TargetRule rule) const {
  const Eigen::MatrixXd next_in = critic_input(batch.next_states, next_actions);
  const Eigen::MatrixXd p1n = z1_target.forward(next_in);
  const Eigen::MatrixXd p2n = z2_target.forward(next_in);
  Eigen::MatrixXd p1c, p2c;
  if (rule == TargetRule::kTdRegularized) {
    const Eigen::MatrixXd cur_in = critic_input(batch.states, batch.actions);
    p1c = z1_target.forward(cur_in);
    p2c = z2_target.forward(cur_in);
  }
  const Eigen::Index b = batch.size();
  DistTargets out;
  out.projected.resize(support.size(), b);
  out.source.resize(static_cast<std::size_t>(b));
  out.d1.assign(static_cast<std::size_t>(b), 0.0);
  out.d2.assign(static_cast<std::size_t>(b), 0.0);
  std::vector<double> shifted(static_cast<std::size_t>(support.size()));
  for (Eigen::Index i = 0; i < b; ++i) {
    const double r = batch.rewards(i);
    const auto k = static_cast<std::size_t>(i);
    int source = 1;
    if (rule == TargetRule::kTdRegularized) {
      const auto op = dtdr_target_operator(r, gamma, {column(p1n, i), column(p1c, i)},
                                           {column(p2n, i), column(p2c, i)}, support);
      source = op.source;
      out.d1[k] = op.d1;
      out.d2[k] = op.d2;
    } else {
      source = expected_value(column(p1n, i), support) <= expected_value(column(p2n, i), support) ? 1 : 2;
    }
    out.source[k] = source;
    for (int j = 0; j < support.size(); ++j) shifted[static_cast<std::size_t>(j)] = r + gamma * support.atom(j);
    const auto dist = project(shifted, column(source == 1 ? p1n : p2n, i), support);
    out.projected.col(i) = Eigen::Map<const Eigen::VectorXd>(dist.probs.data(), support.size());
  }
  return out;
}

Eigen::RowVectorXd DistTwinCritic::expected_q1(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
  const Eigen::MatrixXd p = z1.forward(critic_input(states, actions));
  return support.atoms().transpose() * p;
}

void DistTwinCritic::soft_update_targets(double tau) {
  soft_update(z1_target, z1, tau);
  soft_update(z2_target, z2, tau);
}

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double peak = logits.col(c).maxCoeff();
    const double lse = peak + std::log((logits.col(c).array() - peak).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

namespace {

double entropy_term(const Eigen::MatrixXd& target) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double t = target.data()[i];
    if (t > 0.0) total += t * std::log(t);
  }
  return total;
}

}  // namespace

DistCriticLossAndGrads dist_critic_loss_and_grads(const Batch& batch, const Eigen::MatrixXd& projected_targets,
                                                  const DistTwinCritic& critic) {
  const Eigen::Index b = batch.size();
  if (projected_targets.cols() != b || projected_targets.rows() != critic.support.size()) {
    throw ConfigError("dist_critic_loss_and_grads: one projected target per sample");
  }
  if (!projected_targets.allFinite()) throw NumericError("dist_critic_loss_and_grads: non-finite target");
  const Eigen::MatrixXd input = critic_input(batch.states, batch.actions);
  ForwardCache c1, c2;
  const Eigen::MatrixXd p1 = critic.z1.forward(input, c1);
  const Eigen::MatrixXd p2 = critic.z2.forward(input, c2);
  const Eigen::MatrixXd logp1 = log_softmax(c1.pre_activations.back());
  const Eigen::MatrixXd logp2 = log_softmax(c2.pre_activations.back());
  const double inv_b = 1.0 / static_cast<double>(b);
  const double ce = -((projected_targets.array() * logp1.array()).sum() + (projected_targets.array() * logp2.array()).sum());
  DistCriticLossAndGrads out;
  out.loss = ce * inv_b;
  out.kl = (2.0 * entropy_term(projected_targets) + ce) * inv_b;
  // d CE / d logits = p * sum(t) - t = p - t for normalized targets.
  out.grad_z1 = critic.z1.backward_pre_head(c1, inv_b * (p1 - projected_targets)).grads;
  out.grad_z2 = critic.z2.backward_pre_head(c2, inv_b * (p2 - projected_targets)).grads;
  return out;
}

}  // namespace tdr
