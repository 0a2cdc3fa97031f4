// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace qmlhfl {

/// Physical parameters of the synchronous latency model. Defaults follow the
/// simulation setup (1 MHz, 0.5 W, 1e-10 W, h = 1e-8, b = 40, c = 0.25e9 cycles,
/// f = 0.5e9 Hz).
struct LatencyParams {
  double cycles_per_sample = 0.25e9;   // c
  std::vector<double> frequencies{0.5e9};  // f_i in Hz
  int batch_size = 40;                 // b
  double model_bits = 0.0;             // d_b; 0 means "derive from the model dimension"
  double bandwidth = 1e6;              // W
  double power = 0.5;                  // p
  double channel_gain = 1e-8;          // h
  double noise_power = 1e-10;          // N0
  std::vector<double> edge_times;      // t_{E_{n-1,n}}, n = 2..N
  double kappa = 1.0;                  // device-hop distance factor
  double path_loss_exp = 3.4;
  double deadline = 0.0;               // T_d in seconds
  int global_rounds = 1;               // T

  /// Sets d_b to dimension x 32 bits when it is still unset.
  void resolve_model_bits(std::size_t dimension);
};

/// The three time constants of the latency formula.
struct RoundTimes {
  double t_cp = 0.0;
  double t_de = 0.0;
  std::vector<double> edge;  // length N - 1
};

double compute_tcp(const LatencyParams& params);
double compute_tde(const LatencyParams& params);
RoundTimes round_times(const LatencyParams& params);

/// Per-global-round latency. N = 1 degenerates to tau_1 t_CP + t_DE.
double round_latency(const RoundTimes& times, std::span<const int> taus);
double round_latency(const LatencyParams& params, std::span<const int> taus);
/// Same formula with real-valued taus (used by the continuous optimizer).
double round_latency_real(const RoundTimes& times, std::span<const double> taus);

struct DeadlineCheck {
  bool ok = false;
  double slack = 0.0;  // T_d / T - latency, in seconds per round
};
DeadlineCheck deadline_ok(const LatencyParams& params, std::span<const int> taus);

/// Inter-edge times t_{E_{n-1,n}} = 10 (n-1) t_DE for n = 2..N, the
/// multiples used in the simulation setup.
std::vector<double> scaled_edge_times(int num_layers, double t_de);

}  // namespace qmlhfl
