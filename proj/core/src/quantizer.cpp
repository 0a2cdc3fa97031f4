// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

std::string to_string(QuantizerKind kind) {
  return kind == QuantizerKind::kIdentity ? "identity" : "stochastic_levels";
}

double QuantizerSpec::variance_constant() const {
  if (is_identity()) return 0.0;
  if (!measured_q) throw Error(ErrorCode::kInvalidQuantizer, "stochastic quantizer has no measured q");
  return *measured_q;
}

namespace {

void validate(const QuantizerSpec& spec) {
  if (spec.kind == QuantizerKind::kStochasticLevels && spec.levels < 1) {
    throw Error(ErrorCode::kInvalidQuantizer, "quantization levels must be at least 1");
  }
}

double l2_norm(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace

void quantize_into(const QuantizerSpec& spec, std::span<const double> x, RandomStream& rng, std::span<double> out) {
  validate(spec);
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteInput, "quantizer input contains a non-finite value");
  }
  if (spec.is_identity()) {
    std::copy(x.begin(), x.end(), out.begin());
    return;
  }
  const double norm = l2_norm(x);
  const double s = static_cast<double>(spec.levels);
  if (norm == 0.0) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(x.size()), 0.0);
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = rng.uniform();
    // (s |x_i|) / |x| keeps grid-aligned ratios exact.
    const double scaled = std::min(s * std::fabs(x[i]) / norm, s);
    double level = std::floor(scaled);
    if (level >= s) level = s;  // |x_i| = |x|: deterministic top level
    const double p_up = scaled - level;
    if (u < p_up) level += 1.0;
    const double mag = norm * level / s;
    out[i] = x[i] < 0.0 ? -mag : (x[i] > 0.0 ? mag : 0.0);
  }
}

std::vector<double> quantize(const QuantizerSpec& spec, std::span<const double> x, RandomStream& rng) {
  std::vector<double> out(x.size());
  quantize_into(spec, x, rng, out);
  return out;
}

double relative_variance(const QuantizerSpec& spec, std::span<const double> x) {
  validate(spec);
  if (spec.is_identity()) return 0.0;
  const double norm = l2_norm(x);
  if (norm == 0.0) return 0.0;
  const double s = static_cast<double>(spec.levels);
  double acc = 0.0;
  for (double v : x) {
    const double scaled = std::min(s * std::fabs(v) / norm, s);
    const double p = scaled - std::min(std::floor(scaled), s);
    acc += p * (1.0 - p);
  }
  return acc / (s * s);
}

double measure_q(QuantizerSpec& spec, int dimension, int trials, std::uint64_t seed, const MeasureOptions& options) {
  validate(spec);
  if (spec.is_identity()) {
    spec.measured_q = 0.0;
    return 0.0;
  }
  if (dimension < 1 || trials < 1) throw Error(ErrorCode::kInvalidParams, "measure_q needs d >= 1 and trials >= 1");
  const auto d = static_cast<std::size_t>(dimension);

  std::vector<std::vector<double>> probes;
  RandomStream dir_rng(derive_seed(seed, {0x0D1E}));
  for (int g = 0; g < options.gaussian_directions; ++g) {
    std::vector<double> x(d);
    for (double& v : x) v = dir_rng.normal();
    const double n = l2_norm(x);
    for (double& v : x) v /= n;
    probes.push_back(std::move(x));
  }
  for (std::size_t k = 1;; k *= 2) {
    const std::size_t kk = std::min(k, d);
    std::vector<double> x(d, 0.0);
    const double mag = 1.0 / std::sqrt(static_cast<double>(kk));
    for (std::size_t j = 0; j < kk; ++j) x[j] = (j % 2 == 0) ? mag : -mag;
    probes.push_back(std::move(x));
    if (kk == d) break;
  }

  double worst = 0.0;
  std::vector<double> q(d);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& x = probes[p];
    const double norm2 = std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
    RandomStream rng(derive_seed(seed, {0x0A11, p}));
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      quantize_into(spec, x, rng, q);
      double err = 0.0;
      for (std::size_t j = 0; j < d; ++j) err += (q[j] - x[j]) * (q[j] - x[j]);
      acc += err;
    }
    worst = std::max(worst, acc / trials / norm2);
  }
  spec.measured_q = worst;
  return worst;
}

}  // namespace qmlhfl
