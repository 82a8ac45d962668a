#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tdr {

/// Per-step bias means for the two target critics on the chain oracle. The
/// cumulative bias of critic z at a state is mu_z / (1 - gamma) plus U(-w, w)
/// noise (w = noise_width), drawn independently at s and at s'.
struct BiasScenario {
  std::string label;
  double mu1 = 0.0;
  double mu2 = 0.0;
  double gamma = 0.5;
  double reward = 1.0;
  double noise_width = 0.0;
  std::size_t n_samples = 100000;
};

/// Constant-reward self-loop chain: Q^pi = r / (1 - gamma) everywhere.
struct ChainOracle {
  double reward = 1.0;
  double gamma = 0.5;
  double q_true() const { return reward / (1.0 - gamma); }
};

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Sample mean and its standard error.
MeanEstimate estimate_mean(const std::vector<double>& samples);

struct Lemma1Report {
  MeanEstimate delta1;
  MeanEstimate delta2;
  double expected1 = 0.0;  // -mu1
  double expected2 = 0.0;  // -mu2
  bool pass = false;       // exact to 1e-12 without noise, else within 3 standard errors
};

Lemma1Report lemma1_check(const BiasScenario& scenario, std::uint64_t seed);

struct Theorem1Row {
  BiasScenario scenario;
  MeanEstimate err_tdr;  // y_tdr - Q^pi
  MeanEstimate err_dq;   // y_dq - Q^pi
  double combined_stderr = 0.0;
  double same_pick_fraction = 0.0;
  bool strict_expected = false;  // the two rules select different critics in expectation
  bool pass = false;
};

/// The eight sign/magnitude orderings of (mu1, mu2): four cases and their
/// mirror images with the critics swapped.
std::vector<BiasScenario> theorem1_grid(double gamma, double noise_width, std::size_t n_samples);

Theorem1Row theorem1_scenario(const BiasScenario& scenario, std::uint64_t seed);

/// Evaluates every scenario on its own worker with its own RNG stream.
std::vector<Theorem1Row> theorem1_check(const std::vector<BiasScenario>& grid, std::uint64_t seed);

struct Remark3Result {
  MeanEstimate value;     // E[Psi - rho Delta]
  double analytic = 0.0;  // mu / (1 - gamma) - rho mu
};

/// Psi and Delta of a biased first critic on the chain oracle. With
/// noise_width = 0 one sample is exact.
Remark3Result remark3_check(double gamma, double mu, double rho, double noise_width = 0.0,
                            std::size_t n_samples = 1, std::uint64_t seed = 0);

/// Synthetic 1-D problem: Q^pi(a) = -(a - a_star)^2 + c, linear policy a = phi,
/// per-step bias field psi(a) = mu + g (a - phi) with slope g drawn per bias draw.
/// The cumulative bias is Psi = psi / (1 - gamma) and, since Q^pi satisfies the
/// Bellman equation, Delta = psi.
struct Landscape {
  double a_star = 0.0;
  double c = 0.0;
  double gamma = 0.9;
  double phi = 0.0;
  double mu = 0.0;
};

struct LandscapeStep {
  double phi_true = 0.0;
  double phi_tdr = 0.0;
  double phi_dpg = 0.0;
  double value_true = 0.0;  // Q^pi(phi_true)
  double value_tdr = 0.0;   // biased Q1(phi_tdr)
  double value_dpg = 0.0;   // biased Q1(phi_dpg)
};

double landscape_true_q(const Landscape& land, double a);
double landscape_biased_q(const Landscape& land, double slope, double a);

/// One gradient-ascent step of size alpha under each rule for a single bias draw.
LandscapeStep landscape_step(const Landscape& land, double slope, double rho, double alpha);

struct Theorem23Config {
  int bias_sign = 1;  // +1 overestimation, -1 underestimation, 0 no bias
  double rho = 0.7;
  int n_trials = 1000;
  int n_draws = 200;
  double alpha = 0.05;
  double slope_noise = 0.5;  // draw noise relative to the mean slope
  std::uint64_t seed = 0;
};

struct Theorem23Report {
  int trials = 0;
  double param_order_fraction = 0.0;
  double value_order_fraction = 0.0;
};

Theorem23Report theorem2_3_check(const Theorem23Config& config);

/// CSV with header scenario,err_tdr,err_dq,stderr,pass.
void write_theorem1_csv(std::ostream& out, const std::vector<Theorem1Row>& rows);
std::string format_theorem1_report(const std::vector<Theorem1Row>& rows);

}  // namespace tdr
