// SPDX-License-Identifier: Apache-2.0
// Command line front end: run, theory, optimize, compare-depths, measure-q.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "qmlhfl/config.hpp"
#include "qmlhfl/errors.hpp"
#include "qmlhfl/experiment.hpp"
#include "qmlhfl/gp_optimizer.hpp"
#include "qmlhfl/quantizer.hpp"

namespace {

using namespace qmlhfl;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
      return kExitConfig;
    case ErrorCode::kNoFeasiblePoint:
    case ErrorCode::kNoFeasibleMu:
    case ErrorCode::kInfeasibleStart:
    case ErrorCode::kRegimeViolation:
      return kExitInfeasible;
    default:
      return kExitFailure;
  }
}

// Resolves a config and fills in the optimizer's taus when the schedule defers to it.
struct Resolved {
  PreparedTask prepared;
  RunConfig config;
  std::optional<OptimizerResult> optimizer;
};

OptimizeOptions optimize_options(const RunConfig& c) {
  OptimizeOptions opt;
  if (c.optimize) {
    opt.tolerance = c.optimize->tolerance;
    opt.max_iterations = c.optimize->max_iterations;
    opt.tau_cap = c.optimize->tau_cap;
  }
  return opt;
}

Resolved resolve(const std::string& path) {
  RunConfig raw = load_config(path);
  PreparedTask prepared = build_task(raw);
  RunConfig config = resolve_config(std::move(raw), prepared.task);
  Resolved r{std::move(prepared), std::move(config), std::nullopt};
  if (r.config.optimize) {
    r.optimizer = optimize(objective_spec(r.config), optimize_options(r.config));
    r.config.schedule.taus = r.optimizer->taus_integer;
  }
  return r;
}

int cmd_run(const std::string& path, const std::string& output_dir) {
  RunConfig config = load_config(path);
  if (!output_dir.empty()) config.output_dir = output_dir;
  const ExperimentResult result = run_experiment(config);
  write_artifacts(result, result.resolved.output_dir);
  std::cout << "taus:";
  for (int t : result.taus) std::cout << ' ' << t;
  std::cout << "\nfinal loss: " << result.metrics.final_loss
            << "\nfinal grad_norm_sq: " << result.metrics.final_grad_norm_sq;
  if (result.metrics.final_accuracy) std::cout << "\nfinal accuracy: " << *result.metrics.final_accuracy;
  std::cout << "\nartifacts: " << result.resolved.output_dir.string() << '\n';
  return kExitOk;
}

int cmd_theory(const std::string& path) {
  const Resolved r = resolve(path);
  const TheoryReport t = evaluate_theory(r.config, r.prepared.task, r.config.schedule.taus);
  const json out{{"taus", r.config.schedule.taus},
                 {"q", t.q},
                 {"sigma2", t.sigma2},
                 {"gap0", t.gap0},
                 {"learning_rate", r.config.learning_rate},
                 {"condition_lhs", t.condition_lhs},
                 {"condition_holds", t.condition_holds},
                 {"max_feasible_mu", t.max_feasible_mu},
                 {"speed_term", t.bound.speed_term},
                 {"error_term", t.bound.error_term},
                 {"bound_total", t.bound.total}};
  std::cout << out.dump(2) << '\n';
  return t.condition_holds ? kExitOk : kExitInfeasible;
}

int cmd_optimize(const std::string& path, bool oracle, int tau_max) {
  RunConfig raw = load_config(path);
  if (!raw.optimize) raw.optimize = OptimizeConfig{};
  if (!(raw.latency.deadline > 0.0)) throw Error(ErrorCode::kConfigError, "latency.deadline: required when optimizing");
  const PreparedTask prepared = build_task(raw);
  const RunConfig config = resolve_config(std::move(raw), prepared.task);
  const ObjectiveSpec spec = objective_spec(config);
  const OptimizerResult result = optimize(spec, optimize_options(config));
  json out = optimizer_to_json(result);
  if (oracle) {
    const int cap = tau_max > 0 ? tau_max
                                : (config.optimize->tau_cap ? static_cast<int>(*config.optimize->tau_cap) : 32);
    const auto best = brute_force(spec, std::vector<int>(spec.num_layers(), cap));
    out["oracle"] = {{"taus", best.taus},
                     {"objective", best.objective},
                     {"tau_max", cap},
                     {"ratio", result.objective_integer / best.objective}};
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

int cmd_compare(const std::string& path, const std::vector<int>& depths, const std::string& output) {
  const RunConfig config = load_config(path);
  const std::vector<int> wanted = depths.empty() ? config.compare.depths : depths;
  const auto rows = compare_depths(config, wanted);
  std::ostringstream csv;
  write_depth_csv(rows, csv);
  std::cout << csv.str();
  const std::filesystem::path target = output.empty() ? config.output_dir / "depths.csv" : std::filesystem::path(output);
  std::error_code ec;
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path(), ec);
  std::ofstream f(target, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + target.string());
  f << csv.str();
  return kExitOk;
}

int cmd_measure_q(int levels, int dimension, int trials, std::uint64_t seed) {
  QuantizerSpec spec = QuantizerSpec::stochastic(levels);
  const double q = measure_q(spec, dimension, trials, seed);
  std::cout << json{{"levels", levels}, {"dimension", dimension}, {"trials", trials}, {"seed", seed}, {"q", q}}.dump(2)
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator and analysis toolkit for quantized multi-layer hierarchical federated learning"};
  app.require_subcommand(1);

  std::string config_path, output_dir, output_file;
  bool oracle = false;
  int tau_max = 0;
  std::vector<int> depths;
  int levels = 4, dimension = 64, trials = 10000;
  std::uint64_t seed = 1;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics.csv / summary.json");
  run->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output-dir", output_dir, "Override output_dir from the config");

  auto* theory = app.add_subcommand("theory", "Evaluate the convergence condition and rate bound");
  theory->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);

  auto* opt = app.add_subcommand("optimize", "Optimize the intra-layer iteration counts under the deadline");
  opt->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  opt->add_flag("--oracle", oracle, "Also run the brute-force search");
  opt->add_option("--tau-max", tau_max, "Per-layer cap for the brute-force search")->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare-depths", "Run reduced-depth variants with matched tau products");
  cmp->add_option("config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  cmp->add_option("--depths", depths, "Layer counts to run")->delimiter(',');
  cmp->add_option("-o,--output", output_file, "CSV path (default: <output_dir>/depths.csv)");

  auto* mq = app.add_subcommand("measure-q", "Measure the variance constant of the stochastic quantizer");
  mq->add_option("-s,--levels", levels, "Quantization levels")->check(CLI::PositiveNumber);
  mq->add_option("-d,--dim", dimension, "Vector dimension")->check(CLI::PositiveNumber);
  mq->add_option("-t,--trials", trials, "Draws per probe direction")->check(CLI::PositiveNumber);
  mq->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, output_dir);
    if (*theory) return cmd_theory(config_path);
    if (*opt) return cmd_optimize(config_path, oracle, tau_max);
    if (*cmp) return cmd_compare(config_path, depths, output_file);
    if (*mq) return cmd_measure_q(levels, dimension, trials, seed);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
