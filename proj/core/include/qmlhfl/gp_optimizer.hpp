// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qmlhfl/latency.hpp"
#include "qmlhfl/topology.hpp"

namespace qmlhfl {

/// Weighted speed/error objective over the intra-layer iteration counts,
/// subject to the per-round deadline.
struct ObjectiveSpec {
  double alpha = 0.5;
  std::vector<int> server_counts;  // C_1..C_{N-1}
  int num_devices = 1;             // N_tot
  std::vector<double> q;           // length N
  RoundTimes times;
  int global_rounds = 1;           // T
  double deadline = 0.0;           // T_d
  double speed_scale = 1.0;        // normalization of the speed term
  double error_scale = 1.0;        // normalization of the error term

  int num_layers() const { return static_cast<int>(q.size()); }
  void validate() const;
};

ObjectiveSpec make_objective_spec(const Topology& topology, std::vector<double> q, const LatencyParams& latency,
                                  double alpha);

double objective(const ObjectiveSpec& spec, std::span<const double> taus);
double objective(const ObjectiveSpec& spec, std::span<const int> taus);
double j_plus(const ObjectiveSpec& spec, std::span<const double> taus);
double j_minus(const ObjectiveSpec& spec, std::span<const double> taus);
/// Deadline posynomial; the constraint is G <= 1.
double deadline_ratio(const ObjectiveSpec& spec, std::span<const double> taus);
bool integer_feasible(const ObjectiveSpec& spec, std::span<const int> taus);

/// Exponents of the geometric-mean approximation of J^- + delta:
/// betas[0] for the (1 - alpha + delta) term, betas[k] for the k-th sum term.
std::vector<double> agma_betas(const ObjectiveSpec& spec, std::span<const double> taus, double delta);
/// Monomial approximation of J^-(tau) + delta built from `betas`.
double agma_denominator(const ObjectiveSpec& spec, std::span<const double> taus, double delta,
                        std::span<const double> betas);

struct AgmaPoint {
  std::vector<double> taus;
  double delta = 0.0;
};

/// One successive-GP step: solves min delta s.t. G <= 1, J^+ / Jtilde^- <= 1
/// with Jtilde^- built from `betas`. `tau_cap` bounds every tau from above.
AgmaPoint agma_step(const ObjectiveSpec& spec, const AgmaPoint& current, std::span<const double> betas,
                    std::optional<double> tau_cap = std::nullopt);

struct OptimizeOptions {
  double tolerance = 1e-8;  // relative, on delta
  int max_iterations = 200;
  std::optional<double> tau_cap;
};

struct OptimizerResult {
  std::vector<double> taus_continuous;
  std::vector<int> taus_integer;
  double objective_continuous = 0.0;
  double objective_integer = 0.0;
  int iterations = 0;
  bool converged = false;
  double slack = 0.0;  // seconds per round left by the integer solution
  std::vector<double> delta_history;
};

OptimizerResult optimize(const ObjectiveSpec& spec, const OptimizeOptions& options = {});

struct BruteForceResult {
  std::vector<int> taus;
  double objective = 0.0;
  long long points_visited = 0;
};

/// Exhaustive search over {1..tau_max[n]}^N. Ties keep the lexicographically
/// smallest tuple.
BruteForceResult brute_force(const ObjectiveSpec& spec, std::span<const int> tau_max);

/// Optimum when communication is negligible: all iterations go to a single
/// layer. Layer 1 carries weight 1, layer n+1 carries (C_n/N_tot) prod_{m<=n}(1+q_m);
/// the smallest weight wins, ties go to the higher layer.
std::vector<double> closed_form_computation_limited(const ObjectiveSpec& spec, double negligible_ratio = 1e-6);

}  // namespace qmlhfl
