#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support/oracles.hpp"
#include "tdr/critic_dist.hpp"
#include "tdr/errors.hpp"

namespace {

std::vector<double> point_mass(int atoms, int j) {
  std::vector<double> p(static_cast<std::size_t>(atoms), 0.0);
  p[static_cast<std::size_t>(j)] = 1.0;
  return p;
}

std::vector<double> random_probs(int atoms, tdr::Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(atoms));
  double total = 0.0;
  for (double& v : p) total += (v = rng.uniform(0.0, 1.0));
  for (double& v : p) v /= total;
  return p;
}

tdr::Batch random_batch(int obs, int act, int b, tdr::Rng& rng) {
  tdr::Batch batch;
  batch.states = oracle::random_matrix(obs, b, rng);
  batch.actions = oracle::random_matrix(act, b, rng);
  batch.rewards = oracle::random_matrix(b, 1, rng, 0.0, 1.0);
  batch.next_states = oracle::random_matrix(obs, b, rng);
  batch.done.assign(static_cast<std::size_t>(b), false);
  return batch;
}

}  // namespace

TEST_CASE("support geometry") {
  const tdr::Support s(0.0, 100.0, 51);
  CHECK(s.spacing() == 2.0);
  CHECK(s.atom(50) == 100.0);
  CHECK_THROWS_AS(tdr::Support(0.0, 1.0, 1), tdr::ConfigError);
  CHECK_THROWS_AS(tdr::Support(1.0, 1.0, 5), tdr::ConfigError);
}

TEST_CASE("expected value examples") {
  const tdr::Support two(0.0, 100.0, 2);
  CHECK(tdr::expected_value(std::vector<double>{0.5, 0.5}, two) == 50.0);
  const tdr::Support s(-10.0, 10.0, 21);
  for (int j = 0; j < 21; ++j) CHECK(tdr::expected_value(point_mass(21, j), s) == s.atom(j));
  tdr::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_probs(21, rng);
    double naive = 0.0;
    for (int j = 0; j < 21; ++j) naive += p[static_cast<std::size_t>(j)] * (-10.0 + j * 1.0);
    CHECK(tdr::expected_value(p, s) == doctest::Approx(naive).epsilon(1e-12));
  }
  CHECK_THROWS_AS(tdr::expected_value(std::vector<double>{1.0}, s), tdr::ConfigError);
}

TEST_CASE("projection examples") {
  const tdr::Support s(0.0, 2.0, 3);
  const auto split = tdr::project(std::vector<double>{1.5}, std::vector<double>{1.0}, s);
  CHECK(split.probs == std::vector<double>{0.0, 0.5, 0.5});
  const auto low = tdr::project(std::vector<double>{-1.0}, std::vector<double>{1.0}, s);
  CHECK(low.probs == std::vector<double>{1.0, 0.0, 0.0});
  const auto high = tdr::project(std::vector<double>{7.0}, std::vector<double>{1.0}, s);
  CHECK(high.probs == std::vector<double>{0.0, 0.0, 1.0});
  const auto on_grid = tdr::project(std::vector<double>{1.0}, std::vector<double>{1.0}, s);
  CHECK(on_grid.probs == std::vector<double>{0.0, 1.0, 0.0});
  CHECK_THROWS_AS(tdr::project(std::vector<double>{std::nan("")}, std::vector<double>{1.0}, s), tdr::NumericError);
}

TEST_CASE("projection is normalized and preserves in-range means") {
  const tdr::Support s(0.0, 50.0, 51);
  tdr::Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const double r = rng.uniform(0.0, 1.0);
    const double gamma = rng.uniform(0.5, 0.999);
    const auto p = random_probs(51, rng);
    std::vector<double> atoms(51);
    for (int j = 0; j < 51; ++j) atoms[static_cast<std::size_t>(j)] = r + gamma * s.atom(j);
    const auto out = tdr::project(atoms, p, s);
    const double total = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
    CHECK(std::abs(total - 1.0) <= 1e-9);
    double shifted_mean = 0.0;
    for (std::size_t j = 0; j < 51; ++j) shifted_mean += p[j] * atoms[j];
    if (atoms.back() <= s.v_max()) CHECK(std::abs(tdr::expected_value(out.probs, s) - shifted_mean) <= 0.5 * s.spacing());
  }
}

TEST_CASE("distributional TD errors reduce to the scalar case") {
  const tdr::Support s(0.0, 20.0, 21);
  const auto next = point_mass(21, 10);
  const auto cur = point_mass(21, 9);
  const auto d = tdr::dist_target_td_errors(1.0, 0.9, {next, cur}, {next, cur}, s);
  CHECK(d.delta1 == doctest::Approx(1.0).epsilon(1e-14));
  // Point masses at r / (1 - gamma) = 10 are self-consistent.
  const auto fixed = point_mass(21, 10);
  const auto z = tdr::dist_target_td_errors(5.0, 0.5, {fixed, fixed}, {fixed, fixed}, s);
  CHECK(z.delta1 == 0.0);
  CHECK(z.delta2 == 0.0);
}

TEST_CASE("dTDR source selection") {
  const tdr::Support s(0.0, 20.0, 21);
  SUBCASE("smaller error wins") {
    const auto op = tdr::dtdr_target_operator(0.0, 0.5, {point_mass(21, 4), point_mass(21, 2)},
                                              {point_mass(21, 4), point_mass(21, 5)}, s);
    CHECK(op.d1 == 0.0);
    CHECK(op.source == 1);
    const auto op2 = tdr::dtdr_target_operator(0.0, 0.5, {point_mass(21, 4), point_mass(21, 6)},
                                               {point_mass(21, 4), point_mass(21, 3)}, s);
    CHECK(op2.source == 2);
  }
  SUBCASE("tie goes to 1") {
    const auto op = tdr::dtdr_target_operator(0.0, 0.5, {point_mass(21, 4), point_mass(21, 3)},
                                              {point_mass(21, 4), point_mass(21, 1)}, s);
    CHECK(std::abs(op.d1) == std::abs(op.d2));
    CHECK(op.source == 1);
  }
  SUBCASE("gamma = 0 collapses to a point mass at r") {
    tdr::Rng rng(1);
    const auto spread = random_probs(21, rng);
    const auto op = tdr::dtdr_target_operator(3.0, 0.0, {spread, point_mass(21, 0)},
                                              {point_mass(21, 7), point_mass(21, 0)}, s);
    const auto out = tdr::project(op.atoms, op.probs, s);
    CHECK(out.probs == point_mass(21, 3));
  }
}

TEST_CASE("dTDR selection agrees with scalar TDR on point masses") {
  const tdr::Support s(0.0, 50.0, 51);
  tdr::Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int j1n = static_cast<int>(rng.index(51)), j1c = static_cast<int>(rng.index(51));
    const int j2n = static_cast<int>(rng.index(51)), j2c = static_cast<int>(rng.index(51));
    const double r = rng.uniform(0.0, 1.0);
    const double gamma = rng.uniform(0.5, 0.99);
    const auto op = tdr::dtdr_target_operator(r, gamma, {point_mass(51, j1n), point_mass(51, j1c)},
                                              {point_mass(51, j2n), point_mass(51, j2c)}, s);
    const auto scalar = tdr::tdr_target(r, gamma, {s.atom(j1n), s.atom(j1c)}, {s.atom(j2n), s.atom(j2c)});
    CHECK(op.source == scalar.chosen);
    CHECK(op.d1 == scalar.delta1);
    CHECK(op.d2 == scalar.delta2);
  }
}

TEST_CASE("batched targets use the selected network and the double-Q expectation rule") {
  tdr::Rng rng(6);
  const tdr::Support s(0.0, 10.0, 11);
  auto critic = tdr::DistTwinCritic::create(2, 1, {6}, s, 0.9, rng);
  critic.z2_target = tdr::Mlp::fan_in_uniform({3, 6, 11}, tdr::OutputHead::kSoftmax, rng);
  const auto batch = random_batch(2, 1, 12, rng);
  const Eigen::MatrixXd next_actions = oracle::random_matrix(1, 12, rng);
  const Eigen::MatrixXd xn = tdr::critic_input(batch.next_states, next_actions);
  const Eigen::MatrixXd p1n = critic.z1_target.forward(xn);
  const Eigen::MatrixXd p2n = critic.z2_target.forward(xn);
  const auto dq = critic.targets(batch, next_actions, tdr::TargetRule::kDoubleQ);
  const auto td = critic.targets(batch, next_actions, tdr::TargetRule::kTdRegularized);
  for (Eigen::Index b = 0; b < 12; ++b) {
    const std::vector<double> a(p1n.col(b).data(), p1n.col(b).data() + 11);
    const std::vector<double> c(p2n.col(b).data(), p2n.col(b).data() + 11);
    const int want = tdr::expected_value(a, s) <= tdr::expected_value(c, s) ? 1 : 2;
    CHECK(dq.source[static_cast<std::size_t>(b)] == want);
    CHECK(std::abs(dq.projected.col(b).sum() - 1.0) <= 1e-12);
    CHECK(std::abs(td.projected.col(b).sum() - 1.0) <= 1e-12);
    std::vector<double> atoms(11);
    for (int j = 0; j < 11; ++j) atoms[static_cast<std::size_t>(j)] = batch.rewards(b) + 0.9 * s.atom(j);
    const auto chosen = td.source[static_cast<std::size_t>(b)] == 1 ? a : c;
    const auto proj = tdr::project(atoms, chosen, s);
    for (int j = 0; j < 11; ++j) CHECK(td.projected(j, b) == proj.probs[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("distributional loss examples") {
  tdr::Rng rng(2);
  const tdr::Support s(0.0, 4.0, 5);
  auto critic = tdr::DistTwinCritic::create(1, 1, {4}, s, 0.9, rng);
  critic.z2 = critic.z1;
  const auto batch = random_batch(1, 1, 3, rng);
  const Eigen::MatrixXd p = critic.z1.forward(tdr::critic_input(batch.states, batch.actions));

  SUBCASE("prediction equal to target") {
    const auto lg = tdr::dist_critic_loss_and_grads(batch, p, critic);
    const double entropy = -(p.array() * p.array().log()).sum() / 3.0;
    CHECK(lg.loss == doctest::Approx(2.0 * entropy).epsilon(1e-12));
    CHECK(std::abs(lg.kl) <= 1e-12);
    CHECK(lg.grad_z1.squared_norm() <= 1e-24);
  }
  SUBCASE("point-mass target") {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(5, 3);
    t.row(2).setOnes();
    const auto lg = tdr::dist_critic_loss_and_grads(batch, t, critic);
    const double want = -2.0 * p.row(2).array().log().sum() / 3.0;
    CHECK(lg.loss == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(tdr::dist_critic_loss_and_grads(batch, Eigen::MatrixXd::Zero(4, 3), critic), tdr::ConfigError);
  }
}

TEST_CASE("distributional loss gradients match central differences") {
  double worst = 0.0;
  int skipped = 0;
  const tdr::Support s(0.0, 10.0, 7);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    tdr::Rng rng(seed);
    auto critic = tdr::DistTwinCritic::create(2, 1, {5, 4}, s, 0.9, rng);
    const auto batch = random_batch(2, 1, 3, rng);
    Eigen::MatrixXd t(7, 3);
    for (Eigen::Index b = 0; b < 3; ++b) {
      const auto p = random_probs(7, rng);
      t.col(b) = Eigen::Map<const Eigen::VectorXd>(p.data(), 7);
    }
    const auto lg = tdr::dist_critic_loss_and_grads(batch, t, critic);
    const Eigen::MatrixXd x = tdr::critic_input(batch.states, batch.actions);
    for (int which = 1; which <= 2; ++which) {
      tdr::Mlp& net = which == 1 ? critic.z1 : critic.z2;
      const tdr::Mlp base = net;
      auto value_at = [&](const std::vector<double>& p) {
        net.params().assign_flat(p);
        const double v = tdr::dist_critic_loss_and_grads(batch, t, critic).loss;
        net = base;
        return v;
      };
      auto pattern_at = [&](const std::vector<double>& p) {
        tdr::Mlp n = base;
        n.params().assign_flat(p);
        return oracle::relu_pattern(n, x);
      };
      const auto analytic = (which == 1 ? lg.grad_z1 : lg.grad_z2).flatten();
      const auto rep = oracle::check_gradient(base.params().flatten(), analytic, value_at, pattern_at);
      worst = std::max(worst, rep.max_rel_error);
      skipped += rep.skipped;
    }
  }
  INFO("skipped " << skipped);
  CHECK(worst <= 1e-4);
}

TEST_CASE("log_softmax is stable and consistent") {
  Eigen::MatrixXd logits(3, 2);
  logits << 1000.0, -3.0, 1001.0, 0.0, 999.0, 2.0;
  const Eigen::MatrixXd l = tdr::log_softmax(logits);
  CHECK(l.allFinite());
  for (Eigen::Index c = 0; c < 2; ++c) CHECK(l.col(c).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("expected_q1 is the support-weighted mean") {
  tdr::Rng rng(9);
  const tdr::Support s(0.0, 6.0, 4);
  const auto critic = tdr::DistTwinCritic::create(2, 1, {5}, s, 0.9, rng);
  const Eigen::MatrixXd st = oracle::random_matrix(2, 4, rng);
  const Eigen::MatrixXd ac = oracle::random_matrix(1, 4, rng);
  const Eigen::RowVectorXd q = critic.expected_q1(st, ac);
  const Eigen::MatrixXd p = critic.z1.forward(tdr::critic_input(st, ac));
  for (Eigen::Index b = 0; b < 4; ++b) {
    const std::vector<double> col(p.col(b).data(), p.col(b).data() + 4);
    CHECK(q(b) == doctest::Approx(tdr::expected_value(col, s)).epsilon(1e-14));
  }
}
