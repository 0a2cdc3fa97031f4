// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmlhfl/engine.hpp"
#include "qmlhfl/latency.hpp"
#include "qmlhfl/quantizer.hpp"
#include "qmlhfl/task.hpp"
#include "qmlhfl/topology.hpp"

namespace qmlhfl {

struct TaskConfig {
  TaskKind kind = TaskKind::kQuadratic;
  int size_lo = 20;
  int size_hi = 40;
  // quadratic
  int dimension = 8;
  double anchor_std = 1.0;
  double noise_std = 0.5;
  // classification
  std::string csv_path;  // empty: synthetic pool
  int num_classes = 10;
  int feature_dim = 16;
  int per_class = 400;
  double separation = 3.0;
  int partition_case = 3;
  double test_fraction = 0.2;
  int hidden_units = 16;
  double init_scale = 0.1;
};

struct OptimizeConfig {
  double alpha = 0.6;
  double tolerance = 1e-8;
  int max_iterations = 200;
  std::optional<double> tau_cap;
  double speed_scale = 1.0;
  double error_scale = 1.0;
};

struct TheoryConfig {
  double lipschitz = 1.0;
  std::optional<double> sigma2;  // estimated when absent (exact for quadratic tasks)
  int sigma2_trials = 200;
};

struct CompareConfig {
  std::vector<int> depths;            // layer counts to run; empty means every depth from N down to 1
  std::map<int, double> kappas;       // layer count -> distance factor, default 1
  double threshold = 1e-4;
  std::string metric = "grad_norm_sq";  // or "loss"
};

struct RunConfig {
  std::uint64_t seed = 0;
  Topology topology = Topology::from_fanouts(std::vector<int>{1});
  TaskConfig task;
  Schedule schedule;
  std::optional<OptimizeConfig> optimize;
  std::vector<QuantizerSpec> quantizers;  // one per layer
  int measure_trials = 10000;
  double learning_rate = 0.01;
  std::size_t batch_size = 0;
  bool weighted = false;
  LatencyParams latency;
  std::vector<double> edge_time_multiples;  // used when latency.edge_times is empty
  std::optional<std::pair<double, double>> frequency_range;  // draws f_i per device when set
  TheoryConfig theory;
  CompareConfig compare;
  std::filesystem::path output_dir = "out";
};

/// Parses a config document. Relative file paths are resolved against `base_dir`.
/// Throws Error(kConfigError) with the offending key path on schema violations.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Full echo of a config, every default made explicit.
nlohmann::json to_json(const RunConfig& config);

nlohmann::json topology_to_json(const Topology& topology);
Topology topology_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

}  // namespace qmlhfl
