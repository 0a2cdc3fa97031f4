// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/engine.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "qmlhfl/errors.hpp"
#include "qmlhfl/extended.hpp"

namespace qmlhfl {

namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C;
constexpr std::uint64_t kQuantStream = 0x0A47;

double squared_norm(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

RoundRecord evaluate(const Task& task, std::span<const double> w, const RunOptions& options, int round) {
  RoundRecord r;
  r.round = round;
  r.loss = global_loss_flat(task, w, options.weighted);
  r.grad_norm_sq = squared_norm(global_gradient(task, w, options.weighted));
  r.latency = options.round_latency;
  r.cumulative_time = round * options.round_latency;
  if (!options.test_set.empty() && task.kind() != TaskKind::kQuadratic) r.accuracy = task.accuracy_on(options.test_set, w);
  return r;
}

void finish(const Task& task, ParamVector w, const RunOptions& options, RunMetrics& metrics) {
  const RoundRecord last = evaluate(task, w, options, 0);
  metrics.final_loss = last.loss;
  metrics.final_grad_norm_sq = last.grad_norm_sq;
  metrics.final_accuracy = last.accuracy;
  metrics.final_model = std::move(w);
}

ParamVector starting_model(const Task& task, const RunOptions& options) {
  ParamVector w = options.initial_model ? *options.initial_model : ParamVector(task.dimension(), 0.0);
  if (w.size() != task.dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "initial model has " + std::to_string(w.size()) +
                                                   " entries, task expects " + std::to_string(task.dimension()));
  }
  if (!(options.learning_rate > 0.0)) throw Error(ErrorCode::kInvalidParams, "learning rate must be positive");
  return w;
}

std::size_t batch_for(const Task& task, std::size_t device, const RunOptions& options) {
  return options.batch_size == 0 ? task.dataset_size(device) : options.batch_size;
}

void local_sgd(const Task& task, std::size_t device, ParamVector& w, int steps, int round, long long& step_counter,
               const RunOptions& options) {
  const std::size_t b = batch_for(task, device, options);
  for (int k = 0; k < steps; ++k) {
    RandomStream rng(derive_seed(options.seed, {kBatchStream, device, static_cast<std::uint64_t>(round),
                                                static_cast<std::uint64_t>(step_counter)}));
    const ParamVector g = task.stochastic_gradient(device, w, b, rng);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= options.learning_rate * g[j];
    ++step_counter;
  }
}

class NestedRun {
 public:
  NestedRun(const Task& task, const Topology& topology, const Schedule& schedule,
            std::span<const QuantizerSpec> quantizers, const RunOptions& options)
      : task_(task), topo_(topology), schedule_(schedule), quantizers_(quantizers), options_(options) {
    const int N = topo_.num_layers();
    weight_.resize(N + 1);
    weight_[0].resize(topo_.num_devices());
    for (int i = 0; i < topo_.num_devices(); ++i) {
      weight_[0][i] = options_.weighted ? static_cast<double>(task_.dataset_size(static_cast<std::size_t>(i))) : 1.0;
    }
    for (int n = 1; n <= N; ++n) {
      weight_[n].assign(topo_.layer_size(n), 0.0);
      for (int i = 0; i < topo_.layer_size(n); ++i) {
        for (int c : topo_.children({n, i})) weight_[n][i] += weight_[n - 1][c];
      }
    }
    models_.resize(N + 1);
    for (int n = 1; n <= N; ++n) models_[n].assign(topo_.layer_size(n), ExtendedVector(task_.dimension()));
    devices_.assign(topo_.num_devices(), ParamVector(task_.dimension()));
    device_steps_.assign(topo_.num_devices(), 0);
    transmissions_.resize(N);
    for (int n = 0; n < N; ++n) transmissions_[n].assign(topo_.layer_size(n), 0);
  }

  ParamVector round(const ParamVector& w, int t) {
    round_ = t;
    std::fill(device_steps_.begin(), device_steps_.end(), 0);
    for (auto& layer : transmissions_) std::fill(layer.begin(), layer.end(), 0);
    const int N = topo_.num_layers();
    models_[N][0] = to_extended(w);
    broadcast({N, 0});
    iterate({N, 0});
    return to_double(models_[N][0]);
  }

 private:
  // One aggregation performed by `node` (layer >= 1).
  void iterate(NodeRef node) {
    const int n = node.layer;
    const auto& children = topo_.children(node);
    for (int c : children) {
      if (n == 1) {
        local_sgd(task_, static_cast<std::size_t>(c), devices_[c], schedule_.taus[0], round_, device_steps_[c], options_);
      } else {
        for (int k = 0; k < schedule_.taus[n - 1]; ++k) iterate({n - 1, c});
      }
    }
    aggregate(node);
    broadcast(node);
  }

  void aggregate(NodeRef node) {
    const int n = node.layer;
    const QuantizerSpec& q = quantizers_[n - 1];
    const ExtendedVector anchor = models_[n][node.index];
    ExtendedVector acc = anchor;
    const std::size_t d = anchor.size();
    ExtendedVector delta(d);
    std::vector<double> rounded(d), quantized(d);
    double weight_sum = 0.0;
    for (int c : topo_.children(node)) {
      for (std::size_t j = 0; j < d; ++j) {
        const Extended child = n == 1 ? Extended::from(devices_[c][j]) : models_[n - 1][c][j];
        delta[j] = child - anchor[j];
      }
      if (!q.is_identity()) {
        for (std::size_t j = 0; j < d; ++j) rounded[j] = delta[j].value();
        RandomStream rng(derive_seed(options_.seed, {kQuantStream, static_cast<std::uint64_t>(n - 1),
                                                     static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(round_),
                                                     static_cast<std::uint64_t>(transmissions_[n - 1][c])}));
        quantize_into(q, rounded, rng, quantized);
        for (std::size_t j = 0; j < d; ++j) delta[j] = Extended::from(quantized[j]);
      }
      ++transmissions_[n - 1][c];
      const Extended w = Extended::ratio(weight_[n - 1][c], weight_[n][node.index]);
      weight_sum += w.value();
      for (std::size_t j = 0; j < d; ++j) acc[j] = acc[j] + w * delta[j];
    }
    if (options_.check_invariants && std::fabs(weight_sum - 1.0) > 1e-12) {
      throw Error(ErrorCode::kInvalidParams, "aggregation weights sum to " + std::to_string(weight_sum));
    }
    models_[n][node.index] = std::move(acc);
  }

  // Propagates the node's model to its whole subtree.
  void broadcast(NodeRef node) {
    const ExtendedVector& model = models_[node.layer][node.index];
    const ParamVector rounded = to_double(model);
    std::vector<int> frontier{node.index};
    for (int n = node.layer; n > 0; --n) {
      std::vector<int> next;
      for (int i : frontier) {
        for (int c : topo_.children({n, i})) {
          if (n - 1 == 0) {
            devices_[c] = rounded;
          } else {
            models_[n - 1][c] = model;
          }
          next.push_back(c);
        }
      }
      frontier = std::move(next);
    }
    if (options_.check_invariants) check_subtree(node, model, rounded);
  }

  void check_subtree(NodeRef node, const ExtendedVector& model, const ParamVector& rounded) const {
    for (int dev : topo_.devices_under(node)) {
      if (devices_[dev] != rounded) throw Error(ErrorCode::kInvalidParams, "device model differs after broadcast");
    }
    std::vector<int> frontier{node.index};
    for (int n = node.layer; n > 1; --n) {
      std::vector<int> next;
      for (int i : frontier) {
        for (int c : topo_.children({n, i})) {
          for (std::size_t j = 0; j < model.size(); ++j) {
            if (models_[n - 1][c][j].hi != model[j].hi || models_[n - 1][c][j].lo != model[j].lo) {
              throw Error(ErrorCode::kInvalidParams, "server model differs after broadcast");
            }
          }
          next.push_back(c);
        }
      }
      frontier = std::move(next);
    }
  }

  const Task& task_;
  const Topology& topo_;
  const Schedule& schedule_;
  std::span<const QuantizerSpec> quantizers_;
  const RunOptions& options_;
  int round_ = 0;
  std::vector<std::vector<double>> weight_;
  std::vector<std::vector<ExtendedVector>> models_;  // [layer][index], layers 1..N
  std::vector<ParamVector> devices_;
  std::vector<long long> device_steps_;
  std::vector<std::vector<long long>> transmissions_;  // [sender layer][index]
};

}  // namespace

long long Schedule::tau_product() const {
  long long p = 1;
  for (int t : taus) p *= t;
  return p;
}

void Schedule::validate() const {
  if (taus.empty()) throw Error(ErrorCode::kInvalidSchedule, "schedule has no layers");
  for (int t : taus) {
    if (t < 1) throw Error(ErrorCode::kInvalidSchedule, "every tau must be at least 1");
  }
  if (global_rounds < 1) throw Error(ErrorCode::kInvalidSchedule, "global rounds must be at least 1");
}

double RunMetrics::mean_grad_norm_sq() const {
  if (rounds.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : rounds) acc += r.grad_norm_sq;
  return acc / static_cast<double>(rounds.size());
}

RunMetrics run(const Task& task, const Topology& topology, const Schedule& schedule,
               std::span<const QuantizerSpec> quantizers, const RunOptions& options) {
  schedule.validate();
  const int N = topology.num_layers();
  if (static_cast<int>(quantizers.size()) != N) {
    throw Error(ErrorCode::kQuantizerCountMismatch, "got " + std::to_string(quantizers.size()) +
                                                        " quantizers for " + std::to_string(N) + " layers");
  }
  if (static_cast<int>(schedule.taus.size()) != N) {
    throw Error(ErrorCode::kInvalidSchedule, "schedule has " + std::to_string(schedule.taus.size()) +
                                                 " taus for " + std::to_string(N) + " layers");
  }
  if (static_cast<std::size_t>(topology.num_devices()) != task.num_devices()) {
    throw Error(ErrorCode::kDimensionMismatch, "topology and task disagree on the number of devices");
  }
  ParamVector w = starting_model(task, options);

  NestedRun nested(task, topology, schedule, quantizers, options);
  RunMetrics metrics;
  for (int t = 0; t < schedule.global_rounds; ++t) {
    metrics.rounds.push_back(evaluate(task, w, options, t));
    w = nested.round(w, t);
  }
  finish(task, std::move(w), options, metrics);
  return metrics;
}

RunMetrics run_fedavg_reference(const Task& task, int local_steps, int global_rounds, const RunOptions& options) {
  if (local_steps < 1 || global_rounds < 1) throw Error(ErrorCode::kInvalidSchedule, "steps and rounds must be positive");
  ParamVector w = starting_model(task, options);
  const std::size_t n_dev = task.num_devices();
  double total = 0.0;
  for (std::size_t i = 0; i < n_dev; ++i) total += options.weighted ? static_cast<double>(task.dataset_size(i)) : 1.0;

  RunMetrics metrics;
  for (int t = 0; t < global_rounds; ++t) {
    metrics.rounds.push_back(evaluate(task, w, options, t));
    ExtendedVector acc = to_extended(w);
    for (std::size_t i = 0; i < n_dev; ++i) {
      ParamVector local = w;
      long long steps = 0;
      local_sgd(task, i, local, local_steps, t, steps, options);
      const Extended weight =
          Extended::ratio(options.weighted ? static_cast<double>(task.dataset_size(i)) : 1.0, total);
      for (std::size_t j = 0; j < w.size(); ++j) acc[j] = acc[j] + weight * (Extended::from(local[j]) - Extended::from(w[j]));
    }
    w = to_double(acc);
  }
  finish(task, std::move(w), options, metrics);
  return metrics;
}

}  // namespace qmlhfl
