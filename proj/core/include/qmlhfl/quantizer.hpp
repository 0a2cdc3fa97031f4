// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmlhfl/rng.hpp"

namespace qmlhfl {

enum class QuantizerKind { kIdentity, kStochasticLevels };

/// Per-layer quantizer. For the stochastic kind, coordinate i of Q(x) is
/// sign(x_i) |x| zeta_i with zeta_i in {l/s, (l+1)/s} and P(upper) = s|x_i|/|x| - l.
struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::kIdentity;
  int levels = 1;
  std::optional<double> measured_q;

  static QuantizerSpec identity() { return {QuantizerKind::kIdentity, 1, 0.0}; }
  static QuantizerSpec stochastic(int levels) { return {QuantizerKind::kStochasticLevels, levels, std::nullopt}; }

  bool is_identity() const noexcept { return kind == QuantizerKind::kIdentity; }
  /// Variance constant used by the theory: 0 for identity, else measured_q
  /// (throws if it was never measured or supplied).
  double variance_constant() const;
};

std::string to_string(QuantizerKind kind);

/// Quantizes x. One uniform draw per coordinate, in index order, for the
/// stochastic kind; identity copies. x = 0 maps to 0.
std::vector<double> quantize(const QuantizerSpec& spec, std::span<const double> x, RandomStream& rng);

/// In-place variant used on hot paths.
void quantize_into(const QuantizerSpec& spec, std::span<const double> x, RandomStream& rng, std::span<double> out);

/// Exact E|Q(x) - x|^2 / |x|^2 for the stochastic quantizer at a fixed x.
double relative_variance(const QuantizerSpec& spec, std::span<const double> x);

struct MeasureOptions {
  int gaussian_directions = 16;
};

/// Empirical variance constant: max over probe directions of the Monte-Carlo
/// mean of |Q(x) - x|^2 / |x|^2 with `trials` draws per direction. Probes are
/// normalized Gaussian vectors and equal-magnitude k-sparse sign vectors for
/// k = 1, 2, 4, ..., d. Stores the result in spec.measured_q.
double measure_q(QuantizerSpec& spec, int dimension, int trials, std::uint64_t seed,
                 const MeasureOptions& options = {});

}  // namespace qmlhfl
