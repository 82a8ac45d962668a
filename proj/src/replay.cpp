#include "tdr/replay.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "tdr/errors.hpp"

namespace tdr {

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
}

}  // namespace

Batch make_batch(std::span<const Transition> transitions) {
  if (transitions.empty()) throw ConfigError("make_batch: no transitions");
  const auto b = static_cast<Eigen::Index>(transitions.size());
  const auto obs = static_cast<Eigen::Index>(transitions[0].s.size());
  const auto act = static_cast<Eigen::Index>(transitions[0].a.size());
  Batch batch;
  batch.states.resize(obs, b);
  batch.actions.resize(act, b);
  batch.rewards.resize(b);
  batch.next_states.resize(obs, b);
  batch.done.resize(transitions.size());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& t = transitions[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(t.s.size()) != obs || static_cast<Eigen::Index>(t.s_next.size()) != obs ||
        static_cast<Eigen::Index>(t.a.size()) != act) {
      throw ConfigError("make_batch: inconsistent transition dimensions");
    }
    batch.states.col(i) = Eigen::Map<const Eigen::VectorXd>(t.s.data(), obs);
    batch.actions.col(i) = Eigen::Map<const Eigen::VectorXd>(t.a.data(), act);
    batch.next_states.col(i) = Eigen::Map<const Eigen::VectorXd>(t.s_next.data(), obs);
    batch.rewards(i) = t.r_prime;
    batch.done[static_cast<std::size_t>(i)] = t.done;
  }
  return batch;
}

double lnss_reward(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw ConfigError("lnss_reward: empty reward window");
  check_gamma(gamma);
  double numerator = 0.0;
  double denominator = 0.0;
  double weight = 1.0;
  for (double r : rewards) {
    numerator += weight * r;
    denominator += weight;
    weight *= gamma;
  }
  return numerator / denominator;
}

double lnss_tail_reward(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw ConfigError("lnss_tail_reward: no remaining rewards");
  check_gamma(gamma);
  double discounted = 0.0;
  double weight = 1.0;
  for (double r : rewards) {
    discounted += weight * r;
    weight *= gamma;
  }
  const double m = static_cast<double>(rewards.size());
  return (gamma - 1.0) / (std::pow(gamma, m) - 1.0) * discounted;
}

LnssWindow::LnssWindow(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
  if (n == 0) throw ConfigError("LNSS window size must be >= 1");
  check_gamma(gamma);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int action_dim)
    : capacity_(capacity),
      obs_dim_(obs_dim),
      action_dim_(action_dim),
      states_(obs_dim, static_cast<Eigen::Index>(capacity)),
      actions_(action_dim, static_cast<Eigen::Index>(capacity)),
      rewards_(static_cast<Eigen::Index>(capacity)),
      next_states_(obs_dim, static_cast<Eigen::Index>(capacity)),
      done_(capacity, false) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be >= 1");
  if (obs_dim <= 0 || action_dim <= 0) throw ConfigError("replay buffer dimensions must be positive");
}

void ReplayBuffer::add(const Transition& t) {
  if (static_cast<int>(t.s.size()) != obs_dim_ || static_cast<int>(t.s_next.size()) != obs_dim_ ||
      static_cast<int>(t.a.size()) != action_dim_) {
    throw ConfigError("ReplayBuffer::add: transition dimensions do not match the buffer");
  }
  if (!std::isfinite(t.r_prime)) throw NumericError("ReplayBuffer::add: non-finite surrogate reward");
  const auto c = static_cast<Eigen::Index>(cursor_);
  states_.col(c) = Eigen::Map<const Eigen::VectorXd>(t.s.data(), obs_dim_);
  actions_.col(c) = Eigen::Map<const Eigen::VectorXd>(t.a.data(), action_dim_);
  rewards_(c) = t.r_prime;
  next_states_.col(c) = Eigen::Map<const Eigen::VectorXd>(t.s_next.data(), obs_dim_);
  done_[cursor_] = t.done;
  cursor_ = (cursor_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw ConfigError("ReplayBuffer::at: index out of range");
  // Oldest first.
  const std::size_t slot = (size_ < capacity_) ? i : (cursor_ + i) % capacity_;
  const auto c = static_cast<Eigen::Index>(slot);
  Transition t;
  t.s.assign(states_.col(c).data(), states_.col(c).data() + obs_dim_);
  t.a.assign(actions_.col(c).data(), actions_.col(c).data() + action_dim_);
  t.r_prime = rewards_(c);
  t.s_next.assign(next_states_.col(c).data(), next_states_.col(c).data() + obs_dim_);
  t.done = done_[slot];
  return t;
}

std::optional<Batch> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (size_ == 0 || batch_size == 0) return std::nullopt;
  const auto b = static_cast<Eigen::Index>(batch_size);
  Batch batch;
  batch.states.resize(obs_dim_, b);
  batch.actions.resize(action_dim_, b);
  batch.rewards.resize(b);
  batch.next_states.resize(obs_dim_, b);
  batch.done.resize(batch_size);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto k = static_cast<Eigen::Index>(rng.index(size_));
    batch.states.col(i) = states_.col(k);
    batch.actions.col(i) = actions_.col(k);
    batch.rewards(i) = rewards_(k);
    batch.next_states.col(i) = next_states_.col(k);
    batch.done[static_cast<std::size_t>(i)] = done_[static_cast<std::size_t>(k)];
  }
  return batch;
}

void ReplayBuffer::write_csv(std::ostream& out) const {
  for (int i = 0; i < obs_dim_; ++i) out << 's' << i << ',';
  for (int i = 0; i < action_dim_; ++i) out << 'a' << i << ',';
  out << "r_prime,";
  for (int i = 0; i < obs_dim_; ++i) out << "s_next" << i << ',';
  out << "done\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < size_; ++i) {
    const Transition t = at(i);
    for (double v : t.s) out << v << ',';
    for (double v : t.a) out << v << ',';
    out << t.r_prime << ',';
    for (double v : t.s_next) out << v << ',';
    out << (t.done ? 1 : 0) << '\n';
  }
}

namespace {

Transition emit_front(std::deque<RawStep>& pending, double r_prime, bool done) {
  RawStep& front = pending.front();
  Transition t{std::move(front.s), std::move(front.a), r_prime, std::move(front.s_next), done};
  pending.pop_front();
  return t;
}

std::vector<double> pending_rewards(const std::deque<RawStep>& pending) {
  std::vector<double> rewards;
  rewards.reserve(pending.size());
  for (const auto& step : pending) rewards.push_back(step.r);
  return rewards;
}

}  // namespace

std::size_t push_raw(LnssWindow& window, ReplayBuffer& buffer, RawStep raw, bool episode_ended) {
  auto& pending = window.pending_;
  pending.push_back(std::move(raw));
  std::size_t emitted = 0;
  if (pending.size() == window.n_) {
    const auto rewards = pending_rewards(pending);
    const bool last = episode_ended && pending.size() == 1;
    buffer.add(emit_front(pending, lnss_reward(rewards, window.gamma_), last));
    ++emitted;
  }
  if (episode_ended) {
    while (!pending.empty()) {
      const auto rewards = pending_rewards(pending);
      const bool last = pending.size() == 1;
      buffer.add(emit_front(pending, lnss_tail_reward(rewards, window.gamma_), last));
      ++emitted;
    }
  }
  return emitted;
}

}  // namespace tdr
