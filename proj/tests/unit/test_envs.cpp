#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "tdr/envs.hpp"
#include "tdr/errors.hpp"
#include "tdr/rng.hpp"

namespace {

// Energy pumping: push along the velocity while below the upright energy.
double pump(const tdr::Pendulum& p) {
  const double target = 2.0 * p.params().mass * p.params().gravity * p.params().length;
  if (p.mechanical_energy() >= target) return 0.0;
  return p.theta_dot() >= 0.0 ? 1.0 : -1.0;
}

}  // namespace

TEST_CASE("reset is seed-deterministic") {
  tdr::Pendulum a, b;
  CHECK(a.reset(17).observation == b.reset(17).observation);
  tdr::CartPole c, d;
  CHECK(c.reset(3).observation == d.reset(3).observation);
}

TEST_CASE("pendulum reset hangs within the jitter") {
  tdr::Pendulum p;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = p.reset(seed);
    CHECK(s.step_index == 0);
    CHECK(s.observation[0] <= -std::cos(0.05) + 1e-12);
    CHECK(std::abs(s.observation[2]) <= 0.05);
  }
}

TEST_CASE("observations stay on the unit circle") {
  tdr::Pendulum p;
  p.reset(1);
  for (int t = 0; t < 200; ++t) {
    const auto r = p.step(std::vector<double>{std::sin(0.1 * t)});
    CHECK(r.next_observation[0] * r.next_observation[0] + r.next_observation[1] * r.next_observation[1] ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(r.next_observation[2]) <= p.params().max_speed);
    CHECK(r.reward >= 0.0);
    CHECK(r.reward <= 1.0);
  }
}

TEST_CASE("hanging pendulum at rest with zero torque stays at rest") {
  tdr::Pendulum p;
  p.set_state(std::numbers::pi, 0.0);
  const auto r = p.step(std::vector<double>{0.0});
  CHECK(std::abs(p.theta_dot()) < 1e-12);
  CHECK(std::abs(std::abs(p.theta()) - std::numbers::pi) < 1e-12);
  CHECK(r.reward < 1e-12);
}

TEST_CASE("upright balanced pendulum earns dense reward 1") {
  tdr::Pendulum p;
  p.set_state(0.0, 0.0);
  CHECK(p.step(std::vector<double>{0.0}).reward == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("energy does not drift without damping or torque") {
  // Semi-implicit Euler keeps a shadow energy: the instantaneous value wobbles
  // by O(omega dt) but its average over a full swing is conserved.
  for (double amplitude : {0.3, 1.0, 2.0, 3.0}) {
    tdr::PendulumParams params;
    params.damping = 0.0;
    params.horizon = 1000;
    tdr::Pendulum p(params);
    p.set_state(std::numbers::pi - amplitude, 0.0);
    const double e0 = p.mechanical_energy();
    std::vector<double> energy;
    std::vector<std::size_t> turns;
    for (int t = 0; t < 1000; ++t) {
      const double before = p.theta_dot();
      p.step(std::vector<double>{0.0});
      energy.push_back(p.mechanical_energy());
      if (t > 0 && before * p.theta_dot() < 0.0) turns.push_back(energy.size() - 1);
      CHECK(std::abs(energy.back() - e0) <= 0.05 * e0);
    }
    REQUIRE(turns.size() >= 5);
    auto swing_mean = [&](std::size_t a, std::size_t b) {
      double s = 0.0;
      for (std::size_t i = a; i < b; ++i) s += energy[i];
      return s / static_cast<double>(b - a);
    };
    const std::size_t n = turns.size();
    const double first = swing_mean(turns[0], turns[2]);
    const double last = swing_mean(turns[n - 3], turns[n - 1]);
    INFO("amplitude " << amplitude);
    CHECK(std::abs(last - first) <= 0.01 * first);
  }
}

TEST_CASE("pre-noise rewards stay in [0, 1] under random actions") {
  tdr::Rng rng(11);
  tdr::Pendulum p;
  tdr::CartPole c;
  for (int episode = 0; episode < 20; ++episode) {
    p.reset(static_cast<std::uint64_t>(episode));
    c.reset(static_cast<std::uint64_t>(episode));
    for (int t = 0; t < 200; ++t) {
      const double rp = p.step(std::vector<double>{rng.uniform(-1.0, 1.0)}).reward;
      const double rc = c.step(std::vector<double>{rng.uniform(-1.0, 1.0)}).reward;
      CHECK(rp >= 0.0);
      CHECK(rp <= 1.0);
      CHECK(rc >= 0.0);
      CHECK(rc <= 1.0);
    }
  }
}

TEST_CASE("done only at the horizon") {
  tdr::PendulumParams params;
  params.horizon = 7;
  tdr::Pendulum p(params);
  p.reset(0);
  for (int t = 1; t <= 7; ++t) CHECK(p.step(std::vector<double>{0.5}).done == (t == 7));
}

TEST_CASE("actions are clamped and must be finite") {
  tdr::Pendulum a, b;
  a.set_state(2.0, 0.0);
  b.set_state(2.0, 0.0);
  a.step(std::vector<double>{5.0});
  b.step(std::vector<double>{1.0});
  CHECK(a.theta_dot() == b.theta_dot());
  CHECK_THROWS_AS(a.step(std::vector<double>{std::nan("")}), tdr::ConfigError);
  CHECK_THROWS_AS(a.step(std::vector<double>{0.0, 1.0}), tdr::ConfigError);
}

TEST_CASE("cartpole") {
  tdr::CartPole c;
  SUBCASE("reset hangs") {
    const auto s = c.reset(5);
    CHECK(s.observation.size() == 5);
    CHECK(s.observation[2] < -0.99);
  }
  SUBCASE("upright centred earns reward 1") {
    c.set_state(0.0, 0.0, 0.0, 0.0);
    CHECK(c.step(std::vector<double>{0.0}).reward == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("track ends stop the cart") {
    c.set_state(2.39, 5.0, std::numbers::pi, 0.0);
    c.step(std::vector<double>{1.0});
    const auto s = c.state().observation;
    CHECK(s[0] == doctest::Approx(2.4));
    CHECK(s[1] == 0.0);
  }
}

TEST_CASE("sparse reward follows the gate") {
  auto env = tdr::sparsify(std::make_unique<tdr::Pendulum>(), 0.95);
  auto& inner = static_cast<tdr::Pendulum&>(static_cast<tdr::SparseReward&>(*env).inner());
  inner.set_state(0.0, 0.0);
  CHECK(env->step(std::vector<double>{0.0}).reward == 1.0);
  inner.set_state(std::numbers::pi, 0.0);
  CHECK(env->step(std::vector<double>{0.0}).reward == 0.0);
  CHECK(env->name() == "pendulum_sparse");
  CHECK_THROWS_AS(tdr::sparsify(std::make_unique<tdr::Pendulum>(), 1.0), tdr::ConfigError);
}

TEST_CASE("scripted energy pumping reaches the sparse gate") {
  tdr::PendulumParams params;
  params.horizon = 1000;
  auto env = tdr::sparsify(std::make_unique<tdr::Pendulum>(params), 0.95);
  auto& inner = static_cast<tdr::Pendulum&>(static_cast<tdr::SparseReward&>(*env).inner());
  env->reset(0);
  double total = 0.0;
  for (;;) {
    const auto r = env->step(std::vector<double>{pump(inner)});
    total += r.reward;
    if (r.done) break;
  }
  CHECK(total > 0.0);
}

TEST_CASE("a do-nothing policy never reaches the gate") {
  auto env = tdr::sparsify(std::make_unique<tdr::Pendulum>(), 0.95);
  env->reset(0);
  double total = 0.0;
  for (int t = 0; t < 200; ++t) total += env->step(std::vector<double>{0.0}).reward;
  CHECK(total == 0.0);
}

TEST_CASE("clone carries the state") {
  tdr::Pendulum p;
  p.reset(9);
  p.step(std::vector<double>{0.7});
  auto q = p.clone();
  CHECK(q->step(std::vector<double>{0.1}).next_observation == p.step(std::vector<double>{0.1}).next_observation);
}

TEST_CASE("noise with zero fractions is the identity") {
  tdr::NoiseModel noise({0.0, 0.0, 0.0, 1});
  const std::vector<double> obs{0.1, -0.2, 3.0};
  const std::vector<double> range{2.0, 2.0, 16.0};
  CHECK(noise.perturb_observation(obs, range) == obs);
  CHECK(noise.perturb_action(std::vector<double>{0.4}) == std::vector<double>{0.4});
  CHECK(noise.perturb_reward(0.8) == 0.8);
}

TEST_CASE("perturbations stay inside their intervals") {
  tdr::NoiseModel noise({0.1, 0.1, 0.1, 42});
  const std::vector<double> range{2.0, 2.0, 16.0};
  for (int i = 0; i < 2000; ++i) {
    const double r = noise.perturb_reward(1.0);
    CHECK(r >= 0.9);
    CHECK(r <= 1.1);
    const auto o = noise.perturb_observation(std::vector<double>{0.0, 0.0, 0.0}, range);
    CHECK(std::abs(o[0]) <= 0.2);
    CHECK(std::abs(o[2]) <= 1.6);
    const auto a = noise.perturb_action(std::vector<double>{0.0});
    CHECK(std::abs(a[0]) <= 0.2);
  }
}

TEST_CASE("perturbations average to zero") {
  tdr::NoiseModel noise({0.1, 0.1, 0.1, 8});
  const std::vector<double> range{2.0, 2.0, 16.0};
  const int n = 100000;
  double obs = 0.0, act = 0.0, rew = 0.0;
  for (int i = 0; i < n; ++i) {
    obs += noise.perturb_observation(std::vector<double>{0.0, 0.0, 0.0}, range)[2];
    act += noise.perturb_action(std::vector<double>{0.0})[0];
    rew += noise.perturb_reward(1.0) - 1.0;
  }
  // U(-h, h) has standard deviation h / sqrt(3).
  auto three_sigma = [&](double half) { return 3.0 * half / std::sqrt(3.0) / std::sqrt(double(n)); };
  CHECK(std::abs(obs / n) <= three_sigma(1.6));
  CHECK(std::abs(act / n) <= three_sigma(0.2));
  CHECK(std::abs(rew / n) <= three_sigma(0.1));
}

TEST_CASE("noise draws are seed-deterministic") {
  tdr::NoiseModel a({0.1, 0.1, 0.1, 5});
  tdr::NoiseModel b({0.1, 0.1, 0.1, 5});
  for (int i = 0; i < 10; ++i) CHECK(a.perturb_reward(0.5) == b.perturb_reward(0.5));
}

TEST_CASE("apply_noise perturbs a whole step") {
  tdr::NoiseModel noise({0.0, 0.0, 0.0, 0});
  tdr::StepResult step{{1.0, 0.0, 0.5}, 0.3, false};
  const std::vector<double> action{0.25};
  const std::vector<double> range{2.0, 2.0, 16.0};
  const auto out = tdr::apply_noise(step, action, range, noise);
  CHECK(out.observation == step.next_observation);
  CHECK(out.action == action);
  CHECK(out.reward == 0.3);
}
