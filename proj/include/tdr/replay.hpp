#pragma once

#include <cstddef>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tdr/rng.hpp"

namespace tdr {

/// One stored replay tuple; r_prime is the surrogate stage reward.
struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r_prime = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

/// A raw environment step as seen by the agent, before the surrogate reward.
struct RawStep {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
};

/// Column-major minibatch: column b of each matrix is sample b.
struct Batch {
  Eigen::MatrixXd states;       // obs x B
  Eigen::MatrixXd actions;      // act x B
  Eigen::VectorXd rewards;      // B
  Eigen::MatrixXd next_states;  // obs x B
  std::vector<bool> done;

  Eigen::Index size() const { return states.cols(); }
};

Batch make_batch(std::span<const Transition> transitions);

/// Discount-weighted average of a reward window:
///   sum_t gamma^t r_t / sum_n gamma^n.
/// Throws ConfigError on an empty window or gamma outside (0, 1).
double lnss_reward(std::span<const double> rewards, double gamma);

/// Episode-tail form (gamma - 1) / (gamma^M - 1) * sum_t gamma^t r_t over the M
/// remaining rewards. Algebraically equal to lnss_reward on the same suffix.
double lnss_tail_reward(std::span<const double> rewards, double gamma);

class ReplayBuffer;

/// Pending raw steps of the current episode, at most N of them.
class LnssWindow {
 public:
  LnssWindow(std::size_t n, double gamma);

  std::size_t capacity() const { return n_; }
  double gamma() const { return gamma_; }
  std::size_t pending() const { return pending_.size(); }
  void clear() { pending_.clear(); }

 private:
  friend std::size_t push_raw(LnssWindow&, ReplayBuffer&, RawStep, bool);
  std::size_t n_;
  double gamma_;
  std::deque<RawStep> pending_;
};

/// Fixed-capacity ring of transitions; overwrites the oldest when full.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int action_dim);

  void add(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool ready(std::size_t batch_size) const { return size_ >= batch_size && size_ > 0; }
  Transition at(std::size_t i) const;

  /// Uniform sampling with replacement. Returns nullopt when the buffer is empty.
  std::optional<Batch> sample(std::size_t batch_size, Rng& rng) const;

  /// Debug dump: header "s0..,a0..,r_prime,s_next0..,done" then one row per
  /// stored transition, oldest first.
  void write_csv(std::ostream& out) const;

 private:
  std::size_t capacity_;
  int obs_dim_;
  int action_dim_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  Eigen::MatrixXd states_;
  Eigen::MatrixXd actions_;
  Eigen::VectorXd rewards_;
  Eigen::MatrixXd next_states_;
  std::vector<bool> done_;
};

/// Enqueues a raw step. Whenever the window holds N steps the oldest one leaves
/// with the full-window surrogate reward; when the episode ends, every remaining
/// step leaves with the tail reward over its own suffix. The last emitted
/// transition of an episode carries done = true. Returns the number emitted.
std::size_t push_raw(LnssWindow& window, ReplayBuffer& buffer, RawStep raw, bool episode_ended);

}  // namespace tdr
