#include "tdr/bias_lab.hpp"

#include <cmath>
#include <future>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "tdr/errors.hpp"
#include "tdr/rng.hpp"

namespace tdr {

MeanEstimate estimate_mean(const std::vector<double>& samples) {
  if (samples.empty()) throw ConfigError("estimate_mean: no samples");
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double x : samples) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  MeanEstimate out;
  out.mean = mean;
  if (n > 1) out.std_error = std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  return out;
}

namespace {

void validate(const BiasScenario& s) {
  if (!(s.gamma > 0.0 && s.gamma < 1.0)) throw ConfigError("scenario gamma must lie in (0, 1)");
  if (s.n_samples == 0) throw ConfigError("scenario needs at least one sample");
  if (s.noise_width < 0.0) throw ConfigError("noise width must be non-negative");
}

double draw_psi(double mu, double gamma, double width, Rng& rng) {
  const double base = mu / (1.0 - gamma);
  return width > 0.0 ? base + rng.uniform(-width, width) : base;
}

// Target critic values at (s, a) and (s', a') for one sample of the chain.
struct ChainDraw {
  double q1_cur, q1_next, q2_cur, q2_next;
};

ChainDraw draw_chain(const BiasScenario& s, const ChainOracle& oracle, Rng& rng) {
  const double q = oracle.q_true();
  ChainDraw d;
  d.q1_cur = q + draw_psi(s.mu1, s.gamma, s.noise_width, rng);
  d.q1_next = q + draw_psi(s.mu1, s.gamma, s.noise_width, rng);
  d.q2_cur = q + draw_psi(s.mu2, s.gamma, s.noise_width, rng);
  d.q2_next = q + draw_psi(s.mu2, s.gamma, s.noise_width, rng);
  return d;
}

}  // namespace

Lemma1Report lemma1_check(const BiasScenario& scenario, std::uint64_t seed) {
  validate(scenario);
  const ChainOracle oracle{scenario.reward, scenario.gamma};
  Rng rng(seed);
  std::vector<double> d1(scenario.n_samples), d2(scenario.n_samples);
  for (std::size_t i = 0; i < scenario.n_samples; ++i) {
    const ChainDraw c = draw_chain(scenario, oracle, rng);
    d1[i] = oracle.reward + oracle.gamma * c.q1_next - c.q1_cur;
    d2[i] = oracle.reward + oracle.gamma * c.q2_next - c.q2_cur;
  }
  Lemma1Report r;
  r.delta1 = estimate_mean(d1);
  r.delta2 = estimate_mean(d2);
  r.expected1 = -scenario.mu1;
  r.expected2 = -scenario.mu2;
  if (scenario.noise_width == 0.0) {
    r.pass = std::abs(r.delta1.mean - r.expected1) <= 1e-12 && std::abs(r.delta2.mean - r.expected2) <= 1e-12;
  } else {
    r.pass = std::abs(r.delta1.mean - r.expected1) <= 3.0 * r.delta1.std_error &&
             std::abs(r.delta2.mean - r.expected2) <= 3.0 * r.delta2.std_error;
  }
  return r;
}

std::vector<BiasScenario> theorem1_grid(double gamma, double noise_width, std::size_t n_samples) {
  const std::vector<std::pair<double, double>> base{{-0.3, -0.1}, {-0.3, 0.1}, {-0.1, 0.3}, {0.1, 0.3}};
  std::vector<BiasScenario> grid;
  for (int mirror = 0; mirror < 2; ++mirror) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      BiasScenario s;
      s.mu1 = mirror == 0 ? base[i].first : base[i].second;
      s.mu2 = mirror == 0 ? base[i].second : base[i].first;
      s.label = "case" + std::to_string(i + 1) + (mirror == 0 ? "" : "_mirror");
      s.gamma = gamma;
      s.noise_width = noise_width;
      s.n_samples = n_samples;
      grid.push_back(s);
    }
  }
  return grid;
}

Theorem1Row theorem1_scenario(const BiasScenario& scenario, std::uint64_t seed) {
  validate(scenario);
  const ChainOracle oracle{scenario.reward, scenario.gamma};
  const double q = oracle.q_true();
  Rng rng(seed);
  std::vector<double> e_tdr(scenario.n_samples), e_dq(scenario.n_samples);
  std::size_t same = 0;
  for (std::size_t i = 0; i < scenario.n_samples; ++i) {
    const ChainDraw c = draw_chain(scenario, oracle, rng);
    const double d1 = oracle.reward + oracle.gamma * c.q1_next - c.q1_cur;
    const double d2 = oracle.reward + oracle.gamma * c.q2_next - c.q2_cur;
    const int pick_tdr = std::abs(d1) <= std::abs(d2) ? 1 : 2;
    const int pick_dq = c.q1_next <= c.q2_next ? 1 : 2;
    same += pick_tdr == pick_dq ? 1 : 0;
    e_tdr[i] = oracle.reward + oracle.gamma * (pick_tdr == 1 ? c.q1_next : c.q2_next) - q;
    e_dq[i] = oracle.reward + oracle.gamma * (pick_dq == 1 ? c.q1_next : c.q2_next) - q;
  }
  Theorem1Row row;
  row.scenario = scenario;
  row.err_tdr = estimate_mean(e_tdr);
  row.err_dq = estimate_mean(e_dq);
  row.combined_stderr = std::hypot(row.err_tdr.std_error, row.err_dq.std_error);
  row.same_pick_fraction = static_cast<double>(same) / static_cast<double>(scenario.n_samples);
  const int expect_tdr = std::abs(scenario.mu1) <= std::abs(scenario.mu2) ? 1 : 2;
  const int expect_dq = scenario.mu1 <= scenario.mu2 ? 1 : 2;
  row.strict_expected = expect_tdr != expect_dq && std::abs(scenario.mu1) != std::abs(scenario.mu2);
  const double a_tdr = std::abs(row.err_tdr.mean);
  const double a_dq = std::abs(row.err_dq.mean);
  const double tol = 3.0 * row.combined_stderr;
  row.pass = a_tdr <= a_dq + tol && (!row.strict_expected || a_tdr + tol < a_dq);
  return row;
}

std::vector<Theorem1Row> theorem1_check(const std::vector<BiasScenario>& grid, std::uint64_t seed) {
  std::vector<std::future<Theorem1Row>> jobs;
  jobs.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::uint64_t stream_seed = Rng::stream(seed, i).engine()();
    jobs.push_back(std::async(std::launch::async, theorem1_scenario, grid[i], stream_seed));
  }
  std::vector<Theorem1Row> rows;
  rows.reserve(grid.size());
  for (auto& j : jobs) rows.push_back(j.get());
  return rows;
}

Remark3Result remark3_check(double gamma, double mu, double rho, double noise_width, std::size_t n_samples,
                            std::uint64_t seed) {
  BiasScenario s;
  s.mu1 = mu;
  s.gamma = gamma;
  s.noise_width = noise_width;
  s.n_samples = n_samples;
  validate(s);
  const ChainOracle oracle{s.reward, gamma};
  Rng rng(seed);
  std::vector<double> values(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double psi = draw_psi(mu, gamma, noise_width, rng);
    const double psi_next = draw_psi(mu, gamma, noise_width, rng);
    const double q_cur = oracle.q_true() + psi;
    const double q_next = oracle.q_true() + psi_next;
    const double delta = q_cur - (oracle.reward + gamma * q_next);
    values[i] = psi - rho * delta;
  }
  Remark3Result r;
  r.value = estimate_mean(values);
  r.analytic = mu / (1.0 - gamma) - rho * mu;
  return r;
}

double landscape_true_q(const Landscape& land, double a) {
  const double d = a - land.a_star;
  return -d * d + land.c;
}

double landscape_biased_q(const Landscape& land, double slope, double a) {
  return landscape_true_q(land, a) + (land.mu + slope * (a - land.phi)) / (1.0 - land.gamma);
}

LandscapeStep landscape_step(const Landscape& land, double slope, double rho, double alpha) {
  const double grad_true = -2.0 * (land.phi - land.a_star);
  const double grad_psi = slope / (1.0 - land.gamma);
  const double grad_delta = slope;
  LandscapeStep s;
  s.phi_true = land.phi + alpha * grad_true;
  s.phi_dpg = land.phi + alpha * (grad_true + grad_psi);
  s.phi_tdr = land.phi + alpha * (grad_true + grad_psi - rho * grad_delta);
  s.value_true = landscape_true_q(land, s.phi_true);
  s.value_dpg = landscape_biased_q(land, slope, s.phi_dpg);
  s.value_tdr = landscape_biased_q(land, slope, s.phi_tdr);
  return s;
}

Theorem23Report theorem2_3_check(const Theorem23Config& config) {
  if (config.n_trials < 1 || config.n_draws < 1) throw ConfigError("theorem2_3_check: trials and draws must be >= 1");
  if (!(config.alpha > 0.0)) throw ConfigError("theorem2_3_check: alpha must be positive");
  Rng rng(config.seed);
  const double sign = config.bias_sign > 0 ? 1.0 : (config.bias_sign < 0 ? -1.0 : 0.0);
  constexpr double kTol = 1e-12;
  int param_ok = 0;
  int value_ok = 0;
  for (int t = 0; t < config.n_trials; ++t) {
    Landscape land;
    land.gamma = rng.uniform(0.5, 0.95);
    land.a_star = rng.uniform(-1.0, 1.0);
    land.c = rng.uniform(-1.0, 1.0);
    const double gap = rng.uniform(0.5, 1.5);
    land.phi = land.a_star - gap;
    land.mu = sign * rng.uniform(0.05, 0.5);
    const double mean_slope = sign * rng.uniform(0.05, 0.5) * (1.0 - land.gamma) * gap;
    const double spread = config.slope_noise * std::abs(mean_slope);

    LandscapeStep avg;
    for (int d = 0; d < config.n_draws; ++d) {
      const double slope = spread > 0.0 ? mean_slope + rng.uniform(-spread, spread) : mean_slope;
      const LandscapeStep s = landscape_step(land, slope, config.rho, config.alpha);
      avg.phi_true += s.phi_true;
      avg.phi_tdr += s.phi_tdr;
      avg.phi_dpg += s.phi_dpg;
      avg.value_true += s.value_true;
      avg.value_tdr += s.value_tdr;
      avg.value_dpg += s.value_dpg;
    }
    const double inv = 1.0 / config.n_draws;
    const double dt = (avg.phi_true * inv) - land.phi;
    const double dr = (avg.phi_tdr * inv) - land.phi;
    const double dd = (avg.phi_dpg * inv) - land.phi;
    const double vt = avg.value_true * inv;
    const double vr = avg.value_tdr * inv;
    const double vd = avg.value_dpg * inv;
    bool p = false;
    bool v = false;
    if (sign >= 0.0) {
      p = dt <= dr + kTol && dr <= dd + kTol;
      v = vd + kTol >= vr && vr + kTol >= vt;
    } else {
      p = dt + kTol >= dr && dr + kTol >= dd;
      v = vd <= vr + kTol && vr <= vt + kTol;
    }
    param_ok += p ? 1 : 0;
    value_ok += v ? 1 : 0;
  }
  Theorem23Report r;
  r.trials = config.n_trials;
  r.param_order_fraction = static_cast<double>(param_ok) / config.n_trials;
  r.value_order_fraction = static_cast<double>(value_ok) / config.n_trials;
  return r;
}

void write_theorem1_csv(std::ostream& out, const std::vector<Theorem1Row>& rows) {
  out << "scenario,err_tdr,err_dq,stderr,pass\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.scenario.label << ',' << r.err_tdr.mean << ',' << r.err_dq.mean << ',' << r.combined_stderr << ','
        << (r.pass ? 1 : 0) << '\n';
  }
}

std::string format_theorem1_report(const std::vector<Theorem1Row>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << r.scenario.label << " mu=(" << std::showpos << r.scenario.mu1 << ", "
       << r.scenario.mu2 << std::noshowpos << ")  |err_tdr|=" << std::abs(r.err_tdr.mean)
       << "  |err_dq|=" << std::abs(r.err_dq.mean) << "  se=" << r.combined_stderr
       << (r.strict_expected ? "  strict" : "  equal ") << (r.pass ? "  PASS" : "  FAIL") << '\n';
  }
  return os.str();
}

}  // namespace tdr
