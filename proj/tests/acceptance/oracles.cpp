// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qmlhfl/rng.hpp"

namespace qmlhfl::oracle {

namespace {

constexpr std::uint64_t kBatchTag = 0xBA7C;

// Exact running sum of doubles as an unevaluated pair (Knuth two-sum).
struct ExactSum {
  double hi = 0.0, lo = 0.0;
  void add(double x) {
    const double s = hi + x;
    const double bb = s - hi;
    const double err = (hi - (s - bb)) + (x - bb);
    hi = s;
    lo += err;
  }
  double divided_by(double n) const {
    const double q1 = hi / n;
    const double r = std::fma(-q1, n, hi) + lo;
    return q1 + r / n;
  }
};

}  // namespace

std::vector<double> fedavg(const Task& task, int local_steps, int rounds, double lr, std::size_t batch,
                           std::uint64_t seed) {
  const std::size_t n = task.num_devices(), d = task.dimension();
  std::vector<double> w(d, 0.0);
  for (int t = 0; t < rounds; ++t) {
    std::vector<ExactSum> acc(d);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> local = w;
      const std::size_t b = batch == 0 ? task.dataset_size(i) : batch;
      for (int k = 0; k < local_steps; ++k) {
        RandomStream rng(derive_seed(seed, {kBatchTag, i, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)}));
        const auto g = task.stochastic_gradient(i, local, b, rng);
        for (std::size_t j = 0; j < d; ++j) local[j] -= lr * g[j];
      }
      for (std::size_t j = 0; j < d; ++j) acc[j].add(local[j]);
    }
    for (std::size_t j = 0; j < d; ++j) w[j] = acc[j].divided_by(static_cast<double>(n));
  }
  return w;
}

std::vector<std::vector<double>> centroids(const Task& task) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    const auto& samples = task.dataset(i).samples;
    std::vector<double> a(task.dimension(), 0.0);
    for (const auto& s : samples) {
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += s.features[j];
    }
    for (double& v : a) v /= static_cast<double>(samples.size());
    out.push_back(std::move(a));
  }
  return out;
}

double quadratic_loss(const Task& task, std::span<const double> w) {
  const auto a = centroids(task);
  double total = 0.0;
  for (const auto& ai : a) {
    double sq = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) sq += (w[j] - ai[j]) * (w[j] - ai[j]);
    total += 0.5 * sq;
  }
  return total / static_cast<double>(a.size());
}

std::vector<double> quadratic_optimum(const Task& task) {
  const auto a = centroids(task);
  std::vector<double> mean(task.dimension(), 0.0);
  for (const auto& ai : a) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += ai[j] / static_cast<double>(a.size());
  }
  return mean;
}

double quadratic_noise_bound(const Task& task, std::size_t batch) {
  const auto a = centroids(task);
  const auto mean = quadratic_optimum(task);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double drift = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) drift += (a[i][j] - mean[j]) * (a[i][j] - mean[j]);
    const auto& samples = task.dataset(i).samples;
    const double D = static_cast<double>(samples.size());
    double spread = 0.0;
    for (const auto& s : samples) {
      for (std::size_t j = 0; j < mean.size(); ++j) spread += (s.features[j] - a[i][j]) * (s.features[j] - a[i][j]);
    }
    spread /= D;
    const double b = batch == 0 ? D : static_cast<double>(batch);
    const double sampling = D > 1.0 ? (D - b) / (b * (D - 1.0)) * spread : 0.0;
    worst = std::max(worst, drift + sampling);
  }
  return worst;
}

double grid_objective(const GridProblem& p, std::span<const int> taus) {
  const std::size_t N = taus.size();
  double prod = 1.0;
  for (int t : taus) prod *= t;
  double bracket = taus[0] - 1.0;
  for (std::size_t n = 1; n < N; ++n) {
    double quant = 1.0, iters = 1.0;
    for (std::size_t m = 0; m < n; ++m) {
      quant *= 1.0 + p.q[m];
      iters *= taus[m];
    }
    bracket += static_cast<double>(p.server_counts[n - 1]) / p.num_devices * (taus[n] - 1.0) * quant * iters;
  }
  return p.alpha / prod + (1.0 - p.alpha) * bracket;
}

double grid_latency(const GridProblem& p, std::span<const int> taus) {
  const std::size_t N = taus.size();
  auto prod_from = [&](std::size_t first) {  // 1-based, through N
    double v = 1.0;
    for (std::size_t m = first; m <= N; ++m) v *= taus[m - 1];
    return v;
  };
  double t = prod_from(1) * p.t_cp;
  if (N == 1) return t + p.t_de;
  t += prod_from(2) * p.t_de;
  for (std::size_t n = 2; n <= N - 1; ++n) t += prod_from(n + 1) * p.edge[n - 2];
  return t + p.edge[N - 2];
}

GridOptimum grid_search(const GridProblem& p, int cap) {
  const std::size_t N = p.q.size();
  std::vector<int> taus(N, 1);
  GridOptimum best;
  best.objective = std::numeric_limits<double>::infinity();
  while (true) {
    if (grid_latency(p, taus) * p.rounds <= p.deadline) {
      const double v = grid_objective(p, taus);
      if (v < best.objective) {
        best.objective = v;
        best.taus = taus;
        best.found = true;
      }
    }
    std::size_t k = N;
    while (k > 0 && taus[k - 1] == cap) taus[--k] = 1;
    if (k == 0) break;
    ++taus[k - 1];
  }
  return best;
}

}  // namespace qmlhfl::oracle
