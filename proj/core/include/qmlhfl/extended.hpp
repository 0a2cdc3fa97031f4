// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace qmlhfl {

/// Unevaluated sum hi + lo with |lo| <= ulp(hi)/2 (double-double, ~106 bits).
struct Extended {
  double hi = 0.0;
  double lo = 0.0;

  static Extended from(double x) { return {x, 0.0}; }
  /// Correctly rounded quotient a / b carried to ~106 bits.
  static Extended ratio(double a, double b) {
    const double q = a / b;
    const double r = std::fma(-q, b, a);
    return normalize(q, r / b);
  }
  double value() const { return hi; }

  static Extended normalize(double a, double b) {
    const double s = a + b;
    return {s, b - (s - a)};
  }
};

inline Extended two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

inline Extended operator+(Extended a, Extended b) {
  Extended s = two_sum(a.hi, b.hi);
  s.lo += a.lo + b.lo;
  return Extended::normalize(s.hi, s.lo);
}

inline Extended operator-(Extended a, Extended b) { return a + Extended{-b.hi, -b.lo}; }

inline Extended operator*(Extended a, Extended b) {
  const double p = a.hi * b.hi;
  double e = std::fma(a.hi, b.hi, -p);
  e += a.hi * b.lo + a.lo * b.hi;
  return Extended::normalize(p, e);
}

using ExtendedVector = std::vector<Extended>;

inline ExtendedVector to_extended(std::span<const double> x) {
  ExtendedVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = Extended::from(x[i]);
  return out;
}

inline std::vector<double> to_double(const ExtendedVector& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i].value();
  return out;
}

}  // namespace qmlhfl
