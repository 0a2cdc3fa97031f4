// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qmlhfl/quantizer.hpp"
#include "qmlhfl/task.hpp"
#include "qmlhfl/topology.hpp"

namespace qmlhfl {

/// Intra-layer iteration counts (tau_1 .. tau_N) and the global round budget.
struct Schedule {
  std::vector<int> taus;
  int global_rounds = 1;

  long long tau_product() const;
  void validate() const;
};

struct RunOptions {
  double learning_rate = 0.01;
  /// Dataset-size weighted aggregation instead of device-count weights.
  bool weighted = false;
  std::uint64_t seed = 0;
  /// Mini-batch size; 0 means full batch.
  std::size_t batch_size = 0;
  std::optional<ParamVector> initial_model;
  /// Per-round latency recorded in the metrics (seconds).
  double round_latency = 0.0;
  /// Verify broadcast consistency and weight conservation at every step.
  bool check_invariants = false;
  /// Optional held-out set for classification accuracy.
  std::span<const Sample> test_set;
};

/// Quantities for global round t, evaluated at the model w_t the round starts from.
struct RoundRecord {
  int round = 0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double latency = 0.0;
  /// Simulated time at which w_t is available (t * latency).
  double cumulative_time = 0.0;
  std::optional<double> accuracy;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct RunMetrics {
  std::vector<RoundRecord> rounds;
  ParamVector final_model;
  double final_loss = 0.0;
  double final_grad_norm_sq = 0.0;
  std::optional<double> final_accuracy;

  double mean_grad_norm_sq() const;
  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

/// N-layer nested training: tau_1 local SGD steps at devices, and at every
/// layer n each child transmits Q_n(child model - parent anchor) after tau_n of
/// its own iterations; the parent adds the count-weighted (or size-weighted)
/// sum and propagates the result down its subtree. The cloud closes one
/// global round.
///
/// Randomness: mini-batches use the stream (seed, device, round, local step);
/// quantization uses (seed, layer, sender, round, transmission index).
/// Aggregation accumulates in double-double so that with identity quantizers
/// the nested result rounds to the same double as a flat average.
RunMetrics run(const Task& task, const Topology& topology, const Schedule& schedule,
               std::span<const QuantizerSpec> quantizers, const RunOptions& options);

/// Flat FedAvg with `local_steps` local SGD steps per round, same seeding.
RunMetrics run_fedavg_reference(const Task& task, int local_steps, int global_rounds, const RunOptions& options);

}  // namespace qmlhfl
