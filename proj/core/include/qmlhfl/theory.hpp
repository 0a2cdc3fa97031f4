// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "qmlhfl/topology.hpp"

namespace qmlhfl {

/// Constants entering the convergence condition and rate bound.
struct TheoryParams {
  double lipschitz = 1.0;  // L
  double sigma2 = 0.0;     // gradient-noise bound
  double mu = 0.01;        // learning rate
  double gap0 = 0.0;       // F(w0) - F(w*)
  std::vector<double> q;   // per-layer quantization variance constants, length N
  Topology topology = Topology::from_fanouts(std::vector<int>{1});
  std::vector<int> taus;   // length N

  int num_layers() const { return topology.num_layers(); }
  void validate() const;
};

struct RateBound {
  double speed_term = 0.0;
  double error_term = 0.0;
  double total = 0.0;
};

/// (tau_1 - 1) + sum_{n=1}^{N-1} (C_n / N_tot)(tau_{n+1} - 1) prod_{m<=n}(1 + q_m) prod_{m<=n} tau_m.
/// Shared by the rate bound and the iteration-count objective. `server_counts`
/// holds C_1..C_{N-1}; taus may be fractional.
double error_bracket(std::span<const int> server_counts, int num_devices, std::span<const double> taus,
                     std::span<const double> q);

/// Per-node values of the recursion A_n for every node of layer n, where the
/// child term |C_{n-1}| A_{n-1} is replaced by its maximum over the node's
/// children.
std::vector<double> recursion_A_nodes(const TheoryParams& params, int layer);
/// Layer-wide max of A_n, 1 <= n <= N-1.
double recursion_A(const TheoryParams& params, int layer);

/// Left-hand side of the learning-rate condition; the condition holds iff >= 0.
/// N = 1 uses 1 - L^2 mu^2 tau_1 (tau_1 - 1)/2 - L mu tau_1.
double condition_lhs(const TheoryParams& params);
RateBound rate_bound(const TheoryParams& params, int global_rounds);

/// Direct transcriptions of the two special cases (independent code paths).
/// Special forms: corollary1_* requires every q_n = 0, corollary2_* requires N = 2.
double corollary1_condition(const TheoryParams& params);
RateBound corollary1_bound(const TheoryParams& params, int global_rounds);
double corollary2_condition(const TheoryParams& params);
RateBound corollary2_bound(const TheoryParams& params, int global_rounds);

/// Largest mu with condition_lhs >= 0, by bisection to relative tolerance.
double max_feasible_mu(TheoryParams params, double rel_tol = 1e-10);

}  // namespace qmlhfl
