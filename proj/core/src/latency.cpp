// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/latency.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

namespace {

template <typename T>
double latency_impl(const RoundTimes& times, std::span<const T> taus) {
  const std::size_t N = taus.size();
  if (N == 0) throw Error(ErrorCode::kLengthMismatch, "schedule is empty");
  if (times.edge.size() != N - 1) {
    throw Error(ErrorCode::kLengthMismatch, "expected " + std::to_string(N - 1) + " inter-edge times, got " +
                                                std::to_string(times.edge.size()));
  }
  for (T t : taus) {
    if (!(t > 0)) throw Error(ErrorCode::kNonPositiveTau, "every tau must be positive");
  }
  if (N == 1) return static_cast<double>(taus[0]) * times.t_cp + times.t_de;
  // suffix[n] = prod_{m=n}^{N} tau_m with 1-based n; suffix[N+1] = 1.
  std::vector<double> suffix(N + 2, 1.0);
  for (std::size_t n = N; n >= 1; --n) suffix[n] = suffix[n + 1] * static_cast<double>(taus[n - 1]);
  double total = suffix[1] * times.t_cp + suffix[2] * times.t_de;
  for (std::size_t n = 2; n <= N - 1; ++n) total += suffix[n + 1] * times.edge[n - 2];
  return total + times.edge[N - 2];
}

}  // namespace

void LatencyParams::resolve_model_bits(std::size_t dimension) {
  if (model_bits <= 0.0) model_bits = 32.0 * static_cast<double>(dimension);
}

double compute_tcp(const LatencyParams& params) {
  if (params.frequencies.empty()) throw Error(ErrorCode::kInvalidParams, "no device frequencies given");
  const double f_min = *std::min_element(params.frequencies.begin(), params.frequencies.end());
  if (!(f_min > 0.0)) throw Error(ErrorCode::kInvalidParams, "CPU frequencies must be positive");
  return params.cycles_per_sample * params.batch_size / f_min;
}

double compute_tde(const LatencyParams& params) {
  const double h_eff = std::pow(params.kappa, -params.path_loss_exp) * params.channel_gain;
  const double snr = params.power * h_eff / params.noise_power;
  const double rate = params.bandwidth * std::log2(1.0 + snr);
  if (!(snr > 0.0) || !(rate > 0.0) || !std::isfinite(rate)) {
    throw Error(ErrorCode::kNonPositiveRate, "link rate is not positive");
  }
  return params.model_bits / rate;
}

RoundTimes round_times(const LatencyParams& params) {
  return RoundTimes{compute_tcp(params), compute_tde(params), params.edge_times};
}

double round_latency(const RoundTimes& times, std::span<const int> taus) { return latency_impl(times, taus); }

double round_latency(const LatencyParams& params, std::span<const int> taus) {
  return latency_impl(round_times(params), taus);
}

double round_latency_real(const RoundTimes& times, std::span<const double> taus) { return latency_impl(times, taus); }

DeadlineCheck deadline_ok(const LatencyParams& params, std::span<const int> taus) {
  const double latency = round_latency(params, taus);
  const bool ok = latency * params.global_rounds <= params.deadline;
  const double slack = params.deadline / params.global_rounds - latency;
  return DeadlineCheck{ok, ok ? std::max(slack, 0.0) : std::min(slack, -0.0)};
}

std::vector<double> scaled_edge_times(int num_layers, double t_de) {
  std::vector<double> out;
  for (int n = 2; n <= num_layers; ++n) out.push_back(10.0 * (n - 1) * t_de);
  return out;
}

}  // namespace qmlhfl
