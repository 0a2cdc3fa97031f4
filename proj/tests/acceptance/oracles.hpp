// SPDX-License-Identifier: Apache-2.0
// Reference computations written from the formulas, sharing no arithmetic
// with the library beyond the task's gradient oracle and the RNG.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qmlhfl/task.hpp"

namespace qmlhfl::oracle {

/// Flat FedAvg: every device runs `local_steps` SGD steps from the global
/// model with mini-batch streams (seed, device, round, step); the new model
/// is the correctly rounded mean of the local models.
std::vector<double> fedavg(const Task& task, int local_steps, int rounds, double lr, std::size_t batch,
                           std::uint64_t seed);

/// Per-device sample means.
std::vector<std::vector<double>> centroids(const Task& task);
/// F(w) = (1/N) sum_i 1/2 |w - a_i|^2 for the quadratic task.
double quadratic_loss(const Task& task, std::span<const double> w);
/// Unweighted mean of the device centroids, the minimizer of F.
std::vector<double> quadratic_optimum(const Task& task);
/// max_i |a_i - a|^2 + (D_i - b) / (b (D_i - 1)) s_i^2.
double quadratic_noise_bound(const Task& task, std::size_t batch);

struct GridProblem {
  double alpha = 0.5;
  std::vector<int> server_counts;  // C_1..C_{N-1}
  int num_devices = 1;
  std::vector<double> q;           // length N
  double t_cp = 0.0, t_de = 0.0;
  std::vector<double> edge;        // length N - 1
  int rounds = 1;
  double deadline = 0.0;
};

double grid_objective(const GridProblem& p, std::span<const int> taus);
double grid_latency(const GridProblem& p, std::span<const int> taus);

struct GridOptimum {
  std::vector<int> taus;
  double objective = 0.0;
  bool found = false;
};
/// Full enumeration of {1..cap}^N, no pruning.
GridOptimum grid_search(const GridProblem& p, int cap);

}  // namespace qmlhfl::oracle
