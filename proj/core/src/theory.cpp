// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

namespace {

// Sums non-negative terms smallest first.
double ordered_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end(), [](double a, double b) { return std::fabs(a) < std::fabs(b); });
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

double product_taus(std::span<const int> taus, int first, int last) {  // 1-based inclusive
  double p = 1.0;
  for (int m = first; m <= last; ++m) p *= taus[m - 1];
  return p;
}

std::vector<int> server_counts(const Topology& t) {
  std::vector<int> c;
  for (int n = 1; n < t.num_layers(); ++n) c.push_back(t.layer_size(n));
  return c;
}

std::vector<double> as_double(std::span<const int> v) { return {v.begin(), v.end()}; }

bool all_zero(std::span<const double> q) {
  return std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; });
}

}  // namespace

void TheoryParams::validate() const {
  const auto N = static_cast<std::size_t>(num_layers());
  if (!(lipschitz > 0.0)) throw Error(ErrorCode::kInvalidParams, "L must be positive");
  if (!(sigma2 >= 0.0)) throw Error(ErrorCode::kInvalidParams, "sigma^2 must be non-negative");
  if (!(mu > 0.0)) throw Error(ErrorCode::kInvalidParams, "mu must be positive");
  if (!(gap0 >= 0.0)) throw Error(ErrorCode::kInvalidParams, "initial gap must be non-negative");
  if (q.size() != N) throw Error(ErrorCode::kLengthMismatch, "q has " + std::to_string(q.size()) + " entries for " + std::to_string(N) + " layers");
  if (taus.size() != N) throw Error(ErrorCode::kLengthMismatch, "taus has " + std::to_string(taus.size()) + " entries for " + std::to_string(N) + " layers");
  for (double v : q) {
    if (!(v >= 0.0)) throw Error(ErrorCode::kInvalidParams, "q_n must be non-negative");
  }
  for (int t : taus) {
    if (t < 1) throw Error(ErrorCode::kNonPositiveTau, "every tau must be at least 1");
  }
}

double error_bracket(std::span<const int> server_counts, int num_devices, std::span<const double> taus,
                     std::span<const double> q) {
  const std::size_t N = taus.size();
  std::vector<double> terms{taus[0] - 1.0};
  double quant = 1.0, iters = 1.0;
  for (std::size_t n = 1; n < N; ++n) {
    quant *= 1.0 + q[n - 1];
    iters *= taus[n - 1];
    terms.push_back(static_cast<double>(server_counts[n - 1]) / num_devices * (taus[n] - 1.0) * quant * iters);
  }
  return ordered_sum(std::move(terms));
}

std::vector<double> recursion_A_nodes(const TheoryParams& params, int layer) {
  params.validate();
  const int N = params.num_layers();
  if (N < 2) throw Error(ErrorCode::kNeedsTwoLayers, "the recursion needs at least two layers");
  if (layer < 1 || layer > N - 1) {
    throw Error(ErrorCode::kLayerOutOfRange, "layer " + std::to_string(layer) + " outside 1.." + std::to_string(N - 1));
  }
  const auto& topo = params.topology;
  const auto& q = params.q;  // q[n-1] is q_n
  std::vector<double> values(topo.layer_size(1));
  for (int i = 0; i < topo.layer_size(1); ++i) {
    const double c1 = topo.subtree_devices({1, i});
    values[i] = c1 * q[1] * params.taus[0] * params.taus[1] + q[0] * (1.0 + q[1]) * params.taus[0];
  }
  for (int n = 2; n <= layer; ++n) {
    std::vector<double> next(topo.layer_size(n));
    const double iters = product_taus(params.taus, 1, n + 1);
    for (int i = 0; i < topo.layer_size(n); ++i) {
      double child_max = 0.0;
      for (int c : topo.children({n, i})) {
        child_max = std::max(child_max, topo.subtree_devices({n - 1, c}) * values[c]);
      }
      next[i] = topo.subtree_devices({n, i}) * q[n] * iters + (1.0 + q[n]) * child_max;
    }
    values = std::move(next);
  }
  return values;
}

double recursion_A(const TheoryParams& params, int layer) {
  const auto v = recursion_A_nodes(params, layer);
  return *std::max_element(v.begin(), v.end());
}

double condition_lhs(const TheoryParams& params) {
  params.validate();
  const int N = params.num_layers();
  const auto& tau = params.taus;
  const double L = params.lipschitz, mu = params.mu;
  if (N == 1) {
    const double quad = tau[0] * (tau[0] - 1.0) / 2.0;
    return 1.0 - L * L * mu * mu * quad - L * mu * tau[0];
  }
  std::vector<double> quad{tau[0] * (tau[0] - 1.0) / 2.0};
  for (int n = 2; n <= N; ++n) {
    const double p = product_taus(tau, 1, n - 1);
    quad.push_back(tau[n - 1] * (tau[n - 1] - 1.0) / 2.0 * p * p);
  }
  quad.push_back(params.q[0] * tau[1] * tau[0] * tau[0]);
  for (int n = 1; n <= N - 2; ++n) quad.push_back(product_taus(tau, 1, n + 2) * recursion_A(params, n));
  const double linear = product_taus(tau, 1, N) + recursion_A(params, N - 1) / params.topology.num_devices();
  return 1.0 - L * L * mu * mu * ordered_sum(std::move(quad)) - L * mu * linear;
}

RateBound rate_bound(const TheoryParams& params, int global_rounds) {
  params.validate();
  if (global_rounds < 1) throw Error(ErrorCode::kInvalidParams, "T must be at least 1");
  const double L = params.lipschitz, mu = params.mu, s2 = params.sigma2;
  const int n_tot = params.topology.num_devices();
  const auto counts = server_counts(params.topology);
  const auto taus = as_double(params.taus);
  RateBound b;
  b.speed_term = 2.0 * params.gap0 / (mu * global_rounds * product_taus(params.taus, 1, params.num_layers()));
  double quant = 1.0;
  for (double v : params.q) quant *= 1.0 + v;
  b.error_term = L * L * mu * mu / 2.0 * error_bracket(counts, n_tot, taus, params.q) * s2 + L * mu * s2 / n_tot * quant;
  b.total = b.speed_term + b.error_term;
  return b;
}

double corollary1_condition(const TheoryParams& params) {
  params.validate();
  if (!all_zero(params.q)) throw Error(ErrorCode::kWrongSpecialization, "corollary 1 assumes no quantization");
  const auto& tau = params.taus;
  const int N = params.num_layers();
  const double L = params.lipschitz, mu = params.mu;
  double bracket = tau[0] * (tau[0] - 1.0) / 2.0;
  double prefix = 1.0;
  for (int n = 2; n <= N; ++n) {
    prefix *= tau[n - 2];
    bracket += tau[n - 1] * (tau[n - 1] - 1.0) / 2.0 * prefix * prefix;
  }
  double prod = 1.0;
  for (int t : tau) prod *= t;
  return 1.0 - L * L * mu * mu * bracket - L * mu * prod;
}

RateBound corollary1_bound(const TheoryParams& params, int global_rounds) {
  params.validate();
  if (!all_zero(params.q)) throw Error(ErrorCode::kWrongSpecialization, "corollary 1 assumes no quantization");
  const auto& tau = params.taus;
  const int N = params.num_layers();
  const double L = params.lipschitz, mu = params.mu, s2 = params.sigma2;
  const double n_tot = params.topology.num_devices();
  double prod = 1.0;
  for (int t : tau) prod *= t;
  double bracket = tau[0] - 1.0;
  double prefix = 1.0;
  for (int n = 1; n <= N - 1; ++n) {
    prefix *= tau[n - 1];
    bracket += params.topology.layer_size(n) / n_tot * (tau[n] - 1.0) * prefix;
  }
  RateBound b;
  b.speed_term = 2.0 * params.gap0 / (mu * global_rounds * prod);
  b.error_term = L * L * mu * mu / 2.0 * bracket * s2 + L * mu / n_tot * s2;
  b.total = b.speed_term + b.error_term;
  return b;
}

double corollary2_condition(const TheoryParams& params) {
  params.validate();
  if (params.num_layers() != 2) throw Error(ErrorCode::kWrongSpecialization, "corollary 2 is the two-layer case");
  const double t1 = params.taus[0], t2 = params.taus[1];
  const double q1 = params.q[0], q2 = params.q[1];
  const double L = params.lipschitz, mu = params.mu;
  const auto& topo = params.topology;
  double worst = 0.0;
  for (int i = 0; i < topo.layer_size(1); ++i) {
    const double c = topo.subtree_devices({1, i});
    worst = std::max(worst, c * (q2 * t1 * t2 + 1.0 / c * (1.0 + q2) * q1 * t1));
  }
  return 1.0 - L * L * mu * mu * (t1 * (t1 - 1.0) / 2.0 + t1 * t1 * t2 * (t2 - 1.0) / 2.0 + q1 * t2 * t1 * t1) -
         L * mu * (t2 * t1 + worst / topo.num_devices());
}

RateBound corollary2_bound(const TheoryParams& params, int global_rounds) {
  params.validate();
  if (params.num_layers() != 2) throw Error(ErrorCode::kWrongSpecialization, "corollary 2 is the two-layer case");
  const double t1 = params.taus[0], t2 = params.taus[1];
  const double q1 = params.q[0], q2 = params.q[1];
  const double L = params.lipschitz, mu = params.mu, s2 = params.sigma2;
  const double n_tot = params.topology.num_devices();
  const double c1 = params.topology.layer_size(1);
  RateBound b;
  b.speed_term = 2.0 * params.gap0 / (mu * global_rounds * t2 * t1);
  b.error_term = L * L * mu * mu / 2.0 * ((t1 - 1.0) + (1.0 + q1) * (t2 - 1.0) * t1 * c1 / n_tot) * s2 +
                 L * mu / n_tot * (1.0 + q2) * (1.0 + q1) * s2;
  b.total = b.speed_term + b.error_term;
  return b;
}

double max_feasible_mu(TheoryParams params, double rel_tol) {
  params.mu = 1.0;
  params.validate();
  auto lhs = [&](double mu) {
    params.mu = mu;
    return condition_lhs(params);
  };
  // Bracket the root: lhs(0+) = 1 > 0 and lhs decreases strictly in mu.
  double lo = 0.0, hi = 1.0 / params.lipschitz;
  int guard = 0;
  while (lhs(hi) >= 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 2000) throw Error(ErrorCode::kNoFeasibleMu, "condition never fails; parameters are degenerate");
  }
  for (int it = 0; it < 400 && (hi - lo) > rel_tol * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (lhs(mid) >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (!(lo > 0.0)) throw Error(ErrorCode::kNoFeasibleMu, "no positive learning rate satisfies the condition");
  return lo;
}

}  // namespace qmlhfl
