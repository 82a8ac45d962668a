#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdr/bias_lab.hpp"
#include "tdr/config.hpp"
#include "tdr/errors.hpp"
#include "tdr/trainer.hpp"

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset = "desk";
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "JSON config file (may contain a \"preset\" key)");
  cmd->add_option("--preset", args.preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set rho=0.5")->take_all();
}

tdr::TrainConfig build_config(const ConfigArgs& args) {
  if (!args.file.empty()) return tdr::load_config_file(args.file, args.overrides);
  return tdr::load_config(args.preset, "", args.overrides);
}

std::string default_run_dir(const tdr::TrainConfig& c) {
  return tdr::output_dir_from_env("runs") + "/" + tdr::to_string(c.algorithm) + "_seed" + std::to_string(c.seed);
}

int run_train(const ConfigArgs& args, std::string out) {
  const auto config = build_config(args);
  if (out.empty()) out = default_run_dir(config);
  std::cout << "training " << tdr::to_string(config.algorithm) << " on " << config.env
            << (config.sparse ? " (sparse)" : "") << ", seed " << config.seed << ", " << config.max_timesteps
            << " steps -> " << out << '\n';
  const auto result = tdr::run_training(config, out);
  for (const auto& r : result.rows) {
    std::cout << "  step " << std::setw(8) << r.step << "  return " << std::fixed << std::setprecision(3)
              << r.eval_return_mean << " +- " << r.eval_return_std << "  psi " << r.psi_estimate << '\n';
  }
  std::cout << "final return " << result.final_return << (result.success ? " (success)" : "") << '\n';
  return 0;
}

int run_evaluate(const ConfigArgs& args, const std::string& actor_path, int episodes) {
  const auto config = build_config(args);
  tdr::Actor actor;
  actor.pi = tdr::load_checkpoint(actor_path);
  actor.pi_target = actor.pi;
  const auto env = tdr::make_environment(config);
  if (actor.pi.input_dim() != env->observation_dim() || actor.pi.output_dim() != env->action_dim()) {
    throw tdr::ConfigError("checkpoint dimensions do not match environment " + env->name());
  }
  const auto spec = tdr::noise_spec(config, 0);
  const auto result = tdr::evaluate(actor, *env, episodes, config.seed + 100,
                                    spec.any() ? std::optional<tdr::NoiseSpec>(spec) : std::nullopt);
  std::cout << std::fixed << std::setprecision(6) << "episodes " << episodes << "  mean " << result.mean << "  std "
            << result.std << '\n';
  return 0;
}

int run_sweep_cmd(const ConfigArgs& args, const std::vector<double>& rhos, const std::vector<std::uint64_t>& seeds,
                  unsigned workers, std::string out) {
  const auto config = build_config(args);
  if (out.empty()) out = tdr::output_dir_from_env("runs") + "/sweep";
  const auto sweep = tdr::run_sweep(config, rhos, seeds, workers, out);
  std::filesystem::create_directories(out);
  std::ofstream agg(std::filesystem::path(out) / "sweep.csv");
  tdr::write_sweep_csv(agg, sweep);
  std::ofstream cells(std::filesystem::path(out) / "cells.csv");
  tdr::write_sweep_cells_csv(cells, sweep);
  int failed = 0;
  for (const auto& c : sweep.cells) {
    if (!c.ok) {
      ++failed;
      std::cerr << "cell rho=" << c.rho << " seed=" << c.seed << " failed: " << c.error << '\n';
    }
  }
  std::cout << "sweep: " << sweep.cells.size() - failed << "/" << sweep.cells.size() << " cells completed, "
            << sweep.rows.size() << " aggregate rows -> " << out << "/sweep.csv\n";
  return failed == static_cast<int>(sweep.cells.size()) ? 1 : 0;
}

int run_bias_lab(std::uint64_t seed, std::size_t samples, double gamma, double width, double rho, int trials,
                 const std::string& csv_path) {
  bool ok = true;
  std::cout << std::fixed << std::setprecision(6);

  std::cout << "Lemma 1 (E[delta'] = -mu), gamma " << gamma << ", noise width " << width << '\n';
  for (const auto& s : tdr::theorem1_grid(gamma, width, samples)) {
    const auto r = tdr::lemma1_check(s, seed);
    ok = ok && r.pass;
    std::cout << "  " << std::left << std::setw(14) << s.label << " E[d1]=" << r.delta1.mean << " (" << r.expected1
              << ")  E[d2]=" << r.delta2.mean << " (" << r.expected2 << ")" << (r.pass ? "  PASS" : "  FAIL") << '\n';
  }

  std::cout << "Target error, TDR vs double-Q\n";
  const auto rows = tdr::theorem1_check(tdr::theorem1_grid(gamma, width, samples), seed);
  std::cout << tdr::format_theorem1_report(rows);
  for (const auto& r : rows) ok = ok && r.pass;
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    tdr::write_theorem1_csv(csv, rows);
    std::cout << "  csv -> " << csv_path << '\n';
  }

  std::cout << "Penalized bias E[Psi - rho Delta], mu = 0.3\n";
  const double cancel = 1.0 / (1.0 - gamma);
  for (double r : {0.0, rho, cancel}) {
    const auto res = tdr::remark3_check(gamma, 0.3, r);
    std::cout << "  rho=" << r << "  value=" << res.value.mean << "  analytic=" << res.analytic << '\n';
  }

  std::cout << "Actor step orderings, rho " << rho << ", " << trials << " trials\n";
  for (int sign : {1, -1}) {
    tdr::Theorem23Config cfg;
    cfg.bias_sign = sign;
    cfg.rho = rho;
    cfg.n_trials = trials;
    cfg.seed = seed;
    const auto rep = tdr::theorem2_3_check(cfg);
    std::cout << "  " << (sign > 0 ? "over " : "under") << "  parameter order " << rep.param_order_fraction
              << "  value order " << rep.value_order_fraction << '\n';
    ok = ok && rep.param_order_fraction >= 0.99 && rep.value_order_fraction >= 0.99;
  }
  std::cout << (ok ? "all checks passed" : "some checks failed") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin TD-regularized actor-critic toolkit"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train one agent and write metrics.csv plus checkpoints");
  add_config_options(train, train_args);
  train->add_option("-o,--out", train_out, "Output directory (default $TDR_OUTPUT_DIR/<algorithm>_seed<k>)");

  ConfigArgs eval_args;
  std::string actor_path;
  int episodes = 5;
  auto* eval = app.add_subcommand("evaluate", "Evaluate a saved actor checkpoint");
  add_config_options(eval, eval_args);
  eval->add_option("--actor", actor_path, "Actor checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("-n,--episodes", episodes, "Evaluation episodes")->check(CLI::PositiveNumber);

  ConfigArgs sweep_args;
  std::vector<double> rhos{0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  unsigned workers = 0;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Run a rho x seed grid and aggregate mean +- 2 sigma");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--rhos", rhos, "Regularization values")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  sweep->add_option("-j,--workers", workers, "Parallel runs (default: hardware threads)");
  sweep->add_option("-o,--out", sweep_out, "Output directory (default $TDR_OUTPUT_DIR/sweep)");

  std::uint64_t lab_seed = 0;
  std::size_t lab_samples = 100000;
  double lab_gamma = 0.5;
  double lab_width = 0.05;
  double lab_rho = 0.7;
  int lab_trials = 1000;
  std::string lab_csv;
  auto* lab = app.add_subcommand("bias-lab", "Check the bias identities on the chain oracle");
  lab->add_option("--seed", lab_seed, "Random seed");
  lab->add_option("--samples", lab_samples, "Monte-Carlo samples per scenario")->check(CLI::PositiveNumber);
  lab->add_option("--gamma", lab_gamma, "Discount")->check(CLI::Range(0.0, 1.0));
  lab->add_option("--noise-width", lab_width, "Half-width of the uniform bias noise")->check(CLI::NonNegativeNumber);
  lab->add_option("--rho", lab_rho, "Actor regularization");
  lab->add_option("--trials", lab_trials, "Randomized landscape trials")->check(CLI::PositiveNumber);
  lab->add_option("--csv", lab_csv, "Write the target-error table as CSV");

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return run_train(train_args, train_out);
    if (eval->parsed()) return run_evaluate(eval_args, actor_path, episodes);
    if (sweep->parsed()) return run_sweep_cmd(sweep_args, rhos, seeds, workers, sweep_out);
    if (lab->parsed()) return run_bias_lab(lab_seed, lab_samples, lab_gamma, lab_width, lab_rho, lab_trials, lab_csv);
  } catch (const tdr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
