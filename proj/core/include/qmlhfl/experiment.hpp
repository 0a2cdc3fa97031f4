// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmlhfl/config.hpp"
#include "qmlhfl/engine.hpp"
#include "qmlhfl/gp_optimizer.hpp"
#include "qmlhfl/latency.hpp"
#include "qmlhfl/task.hpp"
#include "qmlhfl/theory.hpp"

namespace qmlhfl {

struct PreparedTask {
  Task task;
  std::vector<Sample> test_set;  // empty for quadratic tasks
};

/// Builds the learning task of a config; every random draw comes from the config seed.
PreparedTask build_task(const RunConfig& config);

/// Fills in everything left implicit: per-device frequencies, model size,
/// inter-edge times and measured quantizer constants.
RunConfig resolve_config(RunConfig config, const Task& task);

struct TheoryReport {
  std::vector<double> q;
  double sigma2 = 0.0;
  double gap0 = 0.0;
  double condition_lhs = 0.0;
  bool condition_holds = false;
  double max_feasible_mu = 0.0;
  RateBound bound;
};

TheoryReport evaluate_theory(const RunConfig& resolved, const Task& task, std::span<const int> taus);

ObjectiveSpec objective_spec(const RunConfig& resolved);

struct ExperimentResult {
  RunConfig resolved;
  std::vector<int> taus;
  std::optional<OptimizerResult> optimizer;
  double round_latency = 0.0;
  std::optional<DeadlineCheck> deadline;
  TheoryReport theory;
  RunMetrics metrics;
};

/// measure_q (when needed), optional optimize, then the engine run.
ExperimentResult run_experiment(const RunConfig& config);

void write_metrics_csv(const RunMetrics& metrics, std::ostream& out);
nlohmann::json optimizer_to_json(const OptimizerResult& result);
nlohmann::json summary_json(const ExperimentResult& result);
/// Writes metrics.csv, summary.json and config.resolved.json into `dir`.
void write_artifacts(const ExperimentResult& result, const std::filesystem::path& dir);

struct DepthRow {
  int layers = 0;
  std::vector<int> taus;
  double kappa = 1.0;
  double round_latency = 0.0;
  std::optional<int> rounds_to_threshold;
  std::optional<double> time_to_threshold;
  double final_loss = 0.0;
  double final_grad_norm_sq = 0.0;
};

/// Runs reduced-depth variants of a uniform base config. The merged lowest
/// layers multiply their taus into tau_1 so the product stays fixed, surviving
/// layers keep their quantizers and inter-edge times, and only the device hop
/// is scaled by the per-depth kappa.
std::vector<DepthRow> compare_depths(const RunConfig& base, std::span<const int> depths);
void write_depth_csv(std::span<const DepthRow> rows, std::ostream& out);

}  // namespace qmlhfl
