#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "tdr/actor.hpp"
#include "tdr/errors.hpp"

namespace {

tdr::Batch random_batch(int obs, int act, int b, tdr::Rng& rng) {
  tdr::Batch batch;
  batch.states = oracle::random_matrix(obs, b, rng);
  batch.actions = oracle::random_matrix(act, b, rng);
  batch.rewards = oracle::random_matrix(b, 1, rng, 0.0, 1.0);
  batch.next_states = oracle::random_matrix(obs, b, rng);
  batch.done.assign(static_cast<std::size_t>(b), false);
  return batch;
}

tdr::Batch one_sample(double s, double r, double s_next) {
  tdr::Batch b;
  b.states = Eigen::MatrixXd::Constant(1, 1, s);
  b.actions = Eigen::MatrixXd::Zero(1, 1);
  b.rewards = Eigen::VectorXd::Constant(1, r);
  b.next_states = Eigen::MatrixXd::Constant(1, 1, s_next);
  b.done = {false};
  return b;
}

// Q(s, a) = ws * s + wa * a + c.
tdr::TwinCritic linear_critic(double ws, double wa, double c, double gamma) {
  tdr::TwinCritic critic;
  critic.q1 = tdr::Mlp({2, 1}, tdr::OutputHead::kLinear);
  critic.q1.params().layer(0).weight << ws, wa;
  critic.q1.params().layer(0).bias(0) = c;
  critic.q2 = critic.q1;
  critic.q1_target = critic.q1;
  critic.q2_target = critic.q1;
  critic.gamma = gamma;
  return critic;
}

bool bitwise_equal(const tdr::GradientSet& a, const tdr::GradientSet& b) { return a == b; }

// Activation signs of the policy and of the critic at the policy's actions.
std::string joint_pattern(const tdr::Actor& actor, const tdr::Mlp& critic, const Eigen::MatrixXd& states) {
  const Eigen::MatrixXd a = actor.pi.forward(states);
  return oracle::relu_pattern(actor.pi, states) + oracle::relu_pattern(critic, tdr::critic_input(states, a));
}

Eigen::MatrixXd both_states(const tdr::Batch& b) {
  Eigen::MatrixXd s(b.states.rows(), 2 * b.size());
  s << b.states, b.next_states;
  return s;
}

}  // namespace

TEST_CASE("rho must lie in [0, 1)") {
  tdr::Rng rng(0);
  CHECK_THROWS_AS(tdr::Actor::create(3, 1, {4}, 1.0, 1.0, tdr::PenaltyMode::kThroughBootstrap, rng), tdr::ConfigError);
  CHECK_THROWS_AS(tdr::Actor::create(3, 1, {4}, 1.0, -0.1, tdr::PenaltyMode::kThroughBootstrap, rng), tdr::ConfigError);
  CHECK_NOTHROW(tdr::Actor::create(3, 1, {4}, 1.0, 0.0, tdr::PenaltyMode::kThroughBootstrap, rng));
}

TEST_CASE("actions respect the bound") {
  tdr::Rng rng(1);
  const auto actor = tdr::Actor::create(3, 2, {8}, 2.0, 0.7, tdr::PenaltyMode::kThroughBootstrap, rng);
  const Eigen::MatrixXd a = actor.act(oracle::random_matrix(3, 50, rng, -50.0, 50.0));
  CHECK(a.cwiseAbs().maxCoeff() <= 2.0);
}

TEST_CASE("critic constant in the action gives a zero DPG") {
  tdr::Rng rng(2);
  const auto actor = tdr::Actor::create(1, 1, {4}, 1.0, 0.0, tdr::PenaltyMode::kThroughBootstrap, rng);
  const auto critic = linear_critic(0.7, 0.0, 1.0, 0.9);
  const auto g = tdr::dpg_gradient(oracle::random_matrix(1, 8, rng), actor, critic);
  CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("quadratic critic pulls a linear policy toward its optimum") {
  // a = w s + b, Q = -(a - a*)^2, so dQ/da = -2 (a - a*).
  tdr::Mlp pi({1, 1}, tdr::OutputHead::kLinear);
  pi.params().layer(0).weight(0, 0) = 0.5;
  pi.params().layer(0).bias(0) = -0.2;
  Eigen::MatrixXd s(1, 3);
  s << 0.3, -1.0, 2.0;
  const double a_star = 1.5;
  const Eigen::MatrixXd a = pi.forward(s);
  const Eigen::MatrixXd cot = (-2.0 * (a.array() - a_star) / 3.0).matrix();
  const auto g = tdr::policy_vjp(pi, s, cot);
  double gw = 0.0, gb = 0.0;
  for (int i = 0; i < 3; ++i) {
    gw += -2.0 * (a(0, i) - a_star) * s(0, i) / 3.0;
    gb += -2.0 * (a(0, i) - a_star) / 3.0;
  }
  CHECK(g.layer(0).weight(0, 0) == doctest::Approx(gw).epsilon(1e-14));
  CHECK(g.layer(0).bias(0) == doctest::Approx(gb).epsilon(1e-14));
  tdr::Mlp stepped = pi;
  stepped.params().add_scaled(g, 0.01);
  const double before = (a.array() - a_star).square().sum();
  const double after = (stepped.forward(s).array() - a_star).square().sum();
  CHECK(after < before);
}

TEST_CASE("actor TD error examples") {
  tdr::Rng rng(3);
  auto actor = tdr::Actor::create(1, 1, {4}, 1.0, 0.7, tdr::PenaltyMode::kThroughBootstrap, rng);
  SUBCASE("direct formula") {
    const auto critic = linear_critic(1.0, 0.0, 0.0, 0.9);
    const auto d = tdr::actor_td_error(one_sample(5.0, 1.0, 4.0), actor, critic);
    CHECK(d(0) == doctest::Approx(0.4).epsilon(1e-14));
  }
  SUBCASE("self-consistent critic") {
    const auto critic = linear_critic(0.0, 0.0, 10.0, 0.9);
    const auto d = tdr::actor_td_error(one_sample(0.3, 1.0, -0.2), actor, critic);
    CHECK(std::abs(d(0)) <= 1e-14);
  }
  SUBCASE("uniform additive bias B shifts Delta by B (1 - gamma)") {
    auto critic = tdr::TwinCritic::create(1, 1, {6}, 0.9, rng);
    const auto batch = random_batch(1, 1, 10, rng);
    const Eigen::RowVectorXd base = tdr::actor_td_error(batch, actor, critic);
    critic.q1.params().layers().back().bias(0) += 2.5;
    const Eigen::RowVectorXd biased = tdr::actor_td_error(batch, actor, critic);
    for (Eigen::Index i = 0; i < 10; ++i) CHECK(biased(i) - base(i) == doctest::Approx(2.5 * 0.1).epsilon(1e-12));
  }
}

TEST_CASE("rho = 0 is the plain DPG bitwise") {
  tdr::Rng rng(4);
  auto actor = tdr::Actor::create(3, 1, {8, 8}, 1.0, 0.0, tdr::PenaltyMode::kThroughBootstrap, rng);
  const auto critic = tdr::TwinCritic::create(3, 1, {8, 8}, 0.99, rng);
  const auto batch = random_batch(3, 1, 32, rng);
  CHECK(bitwise_equal(tdr::tdr_gradient(batch, actor, critic).grad, tdr::dpg_gradient(batch.states, actor, critic)));
  actor.mode = tdr::PenaltyMode::kDetachedBootstrap;
  CHECK(bitwise_equal(tdr::tdr_gradient(batch, actor, critic).grad, tdr::dpg_gradient(batch.states, actor, critic)));
}

TEST_CASE("detached bootstrap scales the DPG by 1 - rho") {
  tdr::Rng rng(5);
  auto actor = tdr::Actor::create(3, 2, {8}, 1.0, 0.7, tdr::PenaltyMode::kDetachedBootstrap, rng);
  const auto critic = tdr::TwinCritic::create(3, 2, {8}, 0.99, rng);
  const auto batch = random_batch(3, 2, 16, rng);
  auto want = tdr::dpg_gradient(batch.states, actor, critic);
  want.scale(1.0 - 0.7);
  CHECK(bitwise_equal(tdr::tdr_gradient(batch, actor, critic).grad, want));
}

TEST_CASE("through-bootstrap gradient is affine in rho and reaches gamma * DPG(s') at rho = 1") {
  tdr::Rng rng(6);
  auto actor = tdr::Actor::create(2, 1, {8}, 1.0, 0.0, tdr::PenaltyMode::kThroughBootstrap, rng);
  const auto critic = tdr::TwinCritic::create(2, 1, {8}, 0.9, rng);
  const auto batch = random_batch(2, 1, 16, rng);
  const auto g0 = tdr::tdr_gradient(batch, actor, critic).grad;
  actor.rho = 0.5;
  auto g1 = tdr::tdr_gradient(batch, actor, critic).grad;
  // g(rho) = (1 - rho) DPG(s) + rho gamma DPG(s'), so 2 g(1/2) - g(0) = gamma DPG(s').
  g1.scale(2.0).add_scaled(g0, -1.0);
  auto want = tdr::dpg_gradient(batch.next_states, actor, critic);
  want.scale(0.9);
  const auto a = g1.flatten();
  const auto b = want.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10).scale(1e-12));
}

TEST_CASE("TD-regularized gradient matches central differences of its objective") {
  double worst = 0.0;
  int skipped = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    tdr::Rng rng(seed);
    auto actor = tdr::Actor::create(3, 2, {6, 5}, 1.0, rng.uniform(0.0, 0.95), tdr::PenaltyMode::kThroughBootstrap, rng);
    const auto critic = tdr::TwinCritic::create(3, 2, {6, 5}, 0.9, rng);
    const auto batch = random_batch(3, 2, 4, rng);
    const auto analytic = tdr::tdr_gradient(batch, actor, critic).grad.flatten();
    const auto states = both_states(batch);
    tdr::Actor probe = actor;
    auto value_at = [&](const std::vector<double>& p) {
      probe.pi.params().assign_flat(p);
      return tdr::tdr_objective(batch, probe, critic);
    };
    auto pattern_at = [&](const std::vector<double>& p) {
      probe.pi.params().assign_flat(p);
      return joint_pattern(probe, critic.q1, states);
    };
    const auto rep = oracle::check_gradient(actor.pi.params().flatten(), analytic, value_at, pattern_at);
    worst = std::max(worst, rep.max_rel_error);
    skipped += rep.skipped;
  }
  INFO("skipped " << skipped);
  CHECK(worst <= 1e-4);
}

TEST_CASE("distributional gradient") {
  const tdr::Support support(0.0, 10.0, 11);

  SUBCASE("rho = 0 is the chain rule through the expectation") {
    tdr::Rng rng(7);
    auto actor = tdr::Actor::create(2, 1, {6}, 1.0, 0.0, tdr::PenaltyMode::kThroughBootstrap, rng);
    const auto critic = tdr::DistTwinCritic::create(2, 1, {6}, support, 0.9, rng);
    const auto batch = random_batch(2, 1, 8, rng);
    tdr::ForwardCache pc, qc;
    const Eigen::MatrixXd a = actor.pi.forward(batch.states, pc);
    critic.z1.forward(tdr::critic_input(batch.states, a), qc);
    const Eigen::MatrixXd cot = support.atoms().replicate(1, 8) / 8.0;
    const Eigen::MatrixXd dx = critic.z1.backward(qc, cot).input_cotangent;
    const auto want = actor.pi.backward(pc, dx.bottomRows(1)).grads.flatten();
    const auto got = tdr::dist_tdr_gradient(batch, actor, critic).grad.flatten();
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10).scale(1e-12));
  }

  SUBCASE("detached bootstrap drops the next-state path") {
    tdr::Rng rng(8);
    auto actor = tdr::Actor::create(2, 1, {6}, 1.0, 0.5, tdr::PenaltyMode::kDetachedBootstrap, rng);
    const auto critic = tdr::DistTwinCritic::create(2, 1, {6}, support, 0.9, rng);
    auto batch = random_batch(2, 1, 6, rng);
    const auto g = tdr::dist_tdr_gradient(batch, actor, critic).grad;
    CHECK(g.all_finite());
    CHECK(g.squared_norm() > 0.0);
  }

  SUBCASE("matches central differences of its objective") {
    double worst = 0.0;
    int skipped = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      tdr::Rng rng(seed + 100);
      auto actor = tdr::Actor::create(2, 1, {6, 5}, 1.0, rng.uniform(0.05, 0.95), tdr::PenaltyMode::kThroughBootstrap, rng);
      const auto critic = tdr::DistTwinCritic::create(2, 1, {6, 5}, support, 0.9, rng);
      const auto batch = random_batch(2, 1, 3, rng);
      const auto analytic = tdr::dist_tdr_gradient(batch, actor, critic).grad.flatten();
      const auto states = both_states(batch);
      tdr::Actor probe = actor;
      auto value_at = [&](const std::vector<double>& p) {
        probe.pi.params().assign_flat(p);
        return tdr::dist_tdr_objective(batch, probe, critic);
      };
      auto pattern_at = [&](const std::vector<double>& p) {
        probe.pi.params().assign_flat(p);
        return joint_pattern(probe, critic.z1, states);
      };
      const auto rep = oracle::check_gradient(actor.pi.params().flatten(), analytic, value_at, pattern_at);
      worst = std::max(worst, rep.max_rel_error);
      skipped += rep.skipped;
    }
    INFO("skipped " << skipped);
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("diagnostics") {
  tdr::Rng rng(9);
  auto actor = tdr::Actor::create(2, 1, {6}, 1.0, 0.7, tdr::PenaltyMode::kThroughBootstrap, rng);
  const auto critic = tdr::TwinCritic::create(2, 1, {6}, 0.9, rng);
  const auto batch = random_batch(2, 1, 8, rng);
  const auto g = tdr::tdr_gradient(batch, actor, critic);
  CHECK(g.diagnostics.grad_norm == doctest::Approx(std::sqrt(g.grad.squared_norm())));
  CHECK(g.diagnostics.mean_delta == doctest::Approx(tdr::actor_td_error(batch, actor, critic).mean()));
}

TEST_CASE("penalty mode names round-trip") {
  for (auto m : {tdr::PenaltyMode::kThroughBootstrap, tdr::PenaltyMode::kDetachedBootstrap}) {
    CHECK(tdr::penalty_mode_from_string(tdr::to_string(m)) == m);
  }
  CHECK_THROWS_AS(tdr::penalty_mode_from_string("half"), tdr::ConfigError);
}
