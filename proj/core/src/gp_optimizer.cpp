// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/gp_optimizer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qmlhfl/errors.hpp"
#include "qmlhfl/theory.hpp"

namespace qmlhfl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double speed_weight(const ObjectiveSpec& s) { return s.alpha / s.speed_scale; }
double error_weight(const ObjectiveSpec& s) { return (1.0 - s.alpha) / s.error_scale; }

// coef[k] = (C_k / N_tot) prod_{m<=k} (1 + q_m), k = 1..N-1; coef[0] = 1.
std::vector<double> layer_coefficients(const ObjectiveSpec& s) {
  std::vector<double> coef{1.0};
  double quant = 1.0;
  for (int k = 1; k < s.num_layers(); ++k) {
    quant *= 1.0 + s.q[k - 1];
    coef.push_back(static_cast<double>(s.server_counts[k - 1]) / s.num_devices * quant);
  }
  return coef;
}

// A term c * exp(a . y) of a posynomial in log-variables.
struct Monomial {
  double log_coef;
  std::vector<double> exps;
};
using Posynomial = std::vector<Monomial>;

void push_term(Posynomial& p, double coef, std::vector<double> exps) {
  if (coef > 0.0) p.push_back({std::log(coef), std::move(exps)});
}

Posynomial j_plus_posynomial(const ObjectiveSpec& s) {
  const int N = s.num_layers();
  const auto coef = layer_coefficients(s);
  Posynomial p;
  push_term(p, speed_weight(s), std::vector<double>(N, -1.0));
  std::vector<double> e(N, 0.0);
  e[0] = 1.0;
  push_term(p, error_weight(s), e);
  for (int k = 1; k < N; ++k) {
    e[k] = 1.0;
    push_term(p, error_weight(s) * coef[k], e);
  }
  return p;
}

Posynomial deadline_posynomial(const ObjectiveSpec& s) {
  const int N = s.num_layers();
  const double scale = s.global_rounds / s.deadline;
  Posynomial p;
  push_term(p, scale * s.times.t_cp, std::vector<double>(N, 1.0));
  std::vector<double> e(N, 1.0);
  e[0] = 0.0;
  push_term(p, scale * s.times.t_de, e);
  for (int n = 2; n <= N - 1; ++n) {
    e[n - 1] = 0.0;
    push_term(p, scale * s.times.edge[n - 2], e);
  }
  if (N >= 2) push_term(p, scale * s.times.edge[N - 2], std::vector<double>(N, 0.0));
  return p;
}

struct LogSumExp {
  double value = -kInf;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// log of a posynomial at y, with gradient and Hessian in y.
LogSumExp log_posynomial(const Posynomial& p, const Eigen::VectorXd& y) {
  const auto n = y.size();
  LogSumExp out{-kInf, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)};
  if (p.empty()) return out;
  std::vector<double> z(p.size());
  double zmax = -kInf;
  for (std::size_t i = 0; i < p.size(); ++i) {
    z[i] = p[i].log_coef;
    for (Eigen::Index j = 0; j < n; ++j) z[i] += p[i].exps[j] * y[j];
    zmax = std::max(zmax, z[i]);
  }
  double total = 0.0;
  for (double& v : z) total += (v = std::exp(v - zmax));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Eigen::Map<const Eigen::VectorXd> a(p[i].exps.data(), n);
    const double w = z[i] / total;
    out.grad += w * a;
    out.hess += w * a * a.transpose();
  }
  out.hess -= out.grad * out.grad.transpose();
  out.value = zmax + std::log(total);
  return out;
}

// Log-barrier Newton solver for the AGMA subproblem in x = (log tau, delta).
class Subproblem {
 public:
  Subproblem(const ObjectiveSpec& spec, std::span<const double> betas, std::optional<double> tau_cap)
      : N_(spec.num_layers()),
        jp_(j_plus_posynomial(spec)),
        g_(deadline_posynomial(spec)),
        b_(error_weight(spec)),
        beta_(betas.begin(), betas.end()),
        ycap_(tau_cap ? std::log(*tau_cap) : kInf) {
    const auto coef = layer_coefficients(spec);
    // Constant part of -log Jtilde^- other than the delta term.
    constant_ = 0.0;
    if (beta_[0] > 0.0) constant_ += beta_[0] * std::log(beta_[0]);
    for (int k = 1; k < N_; ++k) {
      if (beta_[k] > 0.0) constant_ -= beta_[k] * (std::log(b_ * coef[k]) - std::log(beta_[k]));
    }
  }

  int dim() const { return N_ + 1; }

  double g_deadline(const Eigen::VectorXd& x) const { return log_posynomial(g_, x.head(N_)).value; }

  // log J^+ - log Jtilde^-.
  double g_ratio(const Eigen::VectorXd& x) const {
    double v = log_posynomial(jp_, x.head(N_)).value + constant_;
    const double delta = x[N_];
    if (beta_[0] > 0.0) v -= beta_[0] * std::log(b_ + delta);
    for (int k = 1; k < N_; ++k) v -= beta_[k] * x.head(k).sum();
    return v;
  }

  bool interior(const Eigen::VectorXd& x) const {
    if (!(x[N_] > 0.0)) return false;
    for (int n = 0; n < N_; ++n) {
      if (!(x[n] > 0.0) || !(x[n] < ycap_)) return false;
    }
    return g_deadline(x) < 0.0 && g_ratio(x) < 0.0;
  }

  double barrier(const Eigen::VectorXd& x, double t) const {
    if (!interior(x)) return kInf;
    double v = t * x[N_] - std::log(-g_deadline(x)) - std::log(-g_ratio(x)) - std::log(x[N_]);
    for (int n = 0; n < N_; ++n) {
      v -= std::log(x[n]);
      if (std::isfinite(ycap_)) v -= std::log(ycap_ - x[n]);
    }
    return v;
  }

  void derivatives(const Eigen::VectorXd& x, double t, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const int d = dim();
    grad = Eigen::VectorXd::Zero(d);
    hess = Eigen::MatrixXd::Zero(d, d);
    grad[N_] = t - 1.0 / x[N_];
    hess(N_, N_) = 1.0 / (x[N_] * x[N_]);
    for (int n = 0; n < N_; ++n) {
      grad[n] -= 1.0 / x[n];
      hess(n, n) += 1.0 / (x[n] * x[n]);
      if (std::isfinite(ycap_)) {
        const double r = ycap_ - x[n];
        grad[n] += 1.0 / r;
        hess(n, n) += 1.0 / (r * r);
      }
    }
    // Deadline constraint (depends on y only).
    {
      const auto lse = log_posynomial(g_, x.head(N_));
      const double s = -lse.value;
      grad.head(N_) += lse.grad / s;
      hess.topLeftCorner(N_, N_) += lse.hess / s + lse.grad * lse.grad.transpose() / (s * s);
    }
    // Ratio constraint.
    {
      const auto lse = log_posynomial(jp_, x.head(N_));
      Eigen::VectorXd cg = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd ch = Eigen::MatrixXd::Zero(d, d);
      cg.head(N_) = lse.grad;
      ch.topLeftCorner(N_, N_) = lse.hess;
      for (int k = 1; k < N_; ++k) cg.head(k).array() -= beta_[k];
      if (beta_[0] > 0.0) {
        const double u = b_ + x[N_];
        cg[N_] = -beta_[0] / u;
        ch(N_, N_) = beta_[0] / (u * u);
      }
      const double s = -g_ratio(x);
      grad += cg / s;
      hess += ch / s + cg * cg.transpose() / (s * s);
    }
  }

  int barrier_terms() const { return 3 + N_ * (std::isfinite(ycap_) ? 2 : 1); }
  double ycap() const { return ycap_; }

 private:
  int N_;
  Posynomial jp_, g_;
  double b_;
  std::vector<double> beta_;
  double ycap_;
  double constant_ = 0.0;
};

std::vector<double> to_real(std::span<const int> v) { return {v.begin(), v.end()}; }

}  // namespace

void ObjectiveSpec::validate() const {
  const int N = num_layers();
  if (N < 1) throw Error(ErrorCode::kLengthMismatch, "q must have one entry per layer");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidParams, "alpha must lie in [0, 1]");
  if (static_cast<int>(server_counts.size()) != N - 1) {
    throw Error(ErrorCode::kLengthMismatch, "server counts must have N - 1 entries");
  }
  if (static_cast<int>(times.edge.size()) != N - 1) {
    throw Error(ErrorCode::kLengthMismatch, "inter-edge times must have N - 1 entries");
  }
  if (num_devices < 1) throw Error(ErrorCode::kInvalidParams, "need at least one device");
  if (global_rounds < 1) throw Error(ErrorCode::kInvalidParams, "T must be at least 1");
  if (!(deadline > 0.0)) throw Error(ErrorCode::kInvalidParams, "deadline must be positive");
  if (!(speed_scale > 0.0) || !(error_scale > 0.0)) {
    throw Error(ErrorCode::kInvalidParams, "normalization factors must be positive");
  }
  if (!(times.t_cp >= 0.0) || !(times.t_de >= 0.0)) throw Error(ErrorCode::kInvalidParams, "times must be >= 0");
  for (double v : q) {
    if (!(v >= 0.0)) throw Error(ErrorCode::kInvalidParams, "q_n must be non-negative");
  }
}

ObjectiveSpec make_objective_spec(const Topology& topology, std::vector<double> q, const LatencyParams& latency,
                                  double alpha) {
  ObjectiveSpec s;
  s.alpha = alpha;
  for (int n = 1; n < topology.num_layers(); ++n) s.server_counts.push_back(topology.layer_size(n));
  s.num_devices = topology.num_devices();
  s.q = std::move(q);
  s.times = round_times(latency);
  s.global_rounds = latency.global_rounds;
  s.deadline = latency.deadline;
  s.validate();
  return s;
}

double objective(const ObjectiveSpec& spec, std::span<const double> taus) {
  spec.validate();
  if (static_cast<int>(taus.size()) != spec.num_layers()) throw Error(ErrorCode::kLengthMismatch, "taus length");
  double prod = 1.0;
  for (double t : taus) {
    if (!(t > 0.0)) throw Error(ErrorCode::kNonPositiveTau, "every tau must be positive");
    prod *= t;
  }
  return speed_weight(spec) / prod +
         error_weight(spec) * error_bracket(spec.server_counts, spec.num_devices, taus, spec.q);
}

double objective(const ObjectiveSpec& spec, std::span<const int> taus) { return objective(spec, to_real(taus)); }

double j_plus(const ObjectiveSpec& spec, std::span<const double> taus) {
  const auto coef = layer_coefficients(spec);
  double prod = 1.0;
  for (double t : taus) prod *= t;
  double bracket = taus[0];
  double prefix = taus[0];
  for (int k = 1; k < spec.num_layers(); ++k) {
    prefix *= taus[k];
    bracket += coef[k] * prefix;
  }
  return speed_weight(spec) / prod + error_weight(spec) * bracket;
}

double j_minus(const ObjectiveSpec& spec, std::span<const double> taus) {
  const auto coef = layer_coefficients(spec);
  double bracket = 1.0;
  double prefix = 1.0;
  for (int k = 1; k < spec.num_layers(); ++k) {
    prefix *= taus[k - 1];
    bracket += coef[k] * prefix;
  }
  return error_weight(spec) * bracket;
}

double deadline_ratio(const ObjectiveSpec& spec, std::span<const double> taus) {
  return spec.global_rounds / spec.deadline * round_latency_real(spec.times, taus);
}

bool integer_feasible(const ObjectiveSpec& spec, std::span<const int> taus) {
  return round_latency(spec.times, taus) * spec.global_rounds <= spec.deadline;
}

std::vector<double> agma_betas(const ObjectiveSpec& spec, std::span<const double> taus, double delta) {
  const auto coef = layer_coefficients(spec);
  const double b = error_weight(spec);
  const double denom = j_minus(spec, taus) + delta;
  std::vector<double> betas{(b + delta) / denom};
  double prefix = 1.0;
  for (int k = 1; k < spec.num_layers(); ++k) {
    prefix *= taus[k - 1];
    betas.push_back(b * coef[k] * prefix / denom);
  }
  return betas;
}

double agma_denominator(const ObjectiveSpec& spec, std::span<const double> taus, double delta,
                        std::span<const double> betas) {
  const auto coef = layer_coefficients(spec);
  const double b = error_weight(spec);
  double log_value = 0.0;
  if (betas[0] > 0.0) log_value += betas[0] * std::log((b + delta) / betas[0]);
  double prefix = 1.0;
  for (int k = 1; k < spec.num_layers(); ++k) {
    prefix *= taus[k - 1];
    if (betas[k] > 0.0) log_value += betas[k] * std::log(b * coef[k] * prefix / betas[k]);
  }
  return std::exp(log_value);
}

AgmaPoint agma_step(const ObjectiveSpec& spec, const AgmaPoint& current, std::span<const double> betas,
                    std::optional<double> tau_cap) {
  spec.validate();
  const int N = spec.num_layers();
  if (static_cast<int>(current.taus.size()) != N || static_cast<int>(betas.size()) != N) {
    throw Error(ErrorCode::kLengthMismatch, "point and betas must have one entry per layer");
  }
  if (tau_cap && !(*tau_cap > 1.0)) throw Error(ErrorCode::kInvalidParams, "tau cap must exceed 1");
  const Subproblem sub(spec, betas, tau_cap);
  const int d = sub.dim();

  // Strictly interior start: pull log tau towards a point just above zero.
  const double eta = 1e-9;
  Eigen::VectorXd x(d);
  bool found = false;
  for (double lambda : {1.0 - 1e-9, 1.0 - 1e-6, 0.999, 0.99, 0.9, 0.5, 0.0}) {
    for (int n = 0; n < N; ++n) {
      const double y = std::log(std::max(current.taus[n], 1.0));
      x[n] = std::clamp(lambda * y + (1.0 - lambda) * eta, eta, sub.ycap() - eta);
    }
    if (sub.g_deadline(x) < 0.0) {
      found = true;
      break;
    }
  }
  if (!found) throw Error(ErrorCode::kInfeasibleStart, "no strictly feasible starting point for the subproblem");
  x[N] = std::max(current.delta, 1e-300) * (1.0 + 1e-6);
  for (int i = 0; sub.g_ratio(x) >= 0.0; ++i) {
    if (i > 4000) throw Error(ErrorCode::kInfeasibleStart, "could not make the ratio constraint strict");
    x[N] *= 2.0;
  }

  const double scale = std::max(error_weight(spec) + speed_weight(spec), 1e-300);
  const double gap_tol = 1e-12 * scale;
  double t = 1.0 / std::max(x[N], 1e-12 * scale);
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  for (int outer = 0; outer < 100; ++outer) {
    for (int inner = 0; inner < 200; ++inner) {
      sub.derivatives(x, t, grad, hess);
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
      const Eigen::VectorXd step = ldlt.solve(-grad);
      if (ldlt.info() != Eigen::Success || !step.allFinite()) {
        throw Error(ErrorCode::kSubproblemFailure, "Newton system could not be solved");
      }
      const double decrement = -grad.dot(step);
      if (decrement / 2.0 < 1e-12) break;
      const double f0 = sub.barrier(x, t);
      double s = 1.0;
      Eigen::VectorXd trial = x + step;
      while (sub.barrier(trial, t) > f0 - 0.25 * s * decrement) {
        s *= 0.5;
        if (s < 1e-20) break;
        trial = x + s * step;
      }
      if (s < 1e-20) break;
      x = trial;
    }
    if (sub.barrier_terms() / t < gap_tol) break;
    t *= 10.0;
  }
  if (!sub.interior(x)) throw Error(ErrorCode::kSubproblemFailure, "solver left the feasible region");

  AgmaPoint next;
  next.taus.resize(N);
  for (int n = 0; n < N; ++n) next.taus[n] = std::exp(x[n]);
  next.delta = x[N];
  return next;
}

OptimizerResult optimize(const ObjectiveSpec& spec, const OptimizeOptions& options) {
  spec.validate();
  const int N = spec.num_layers();
  if (!integer_feasible(spec, std::vector<int>(N, 1))) {
    throw Error(ErrorCode::kNoFeasiblePoint, "even tau = 1 misses the deadline");
  }
  const std::optional<int> int_cap =
      options.tau_cap ? std::optional<int>(static_cast<int>(std::floor(*options.tau_cap))) : std::nullopt;

  OptimizerResult result;
  AgmaPoint point{std::vector<double>(N, 1.0), 0.0};
  point.delta = std::max(j_plus(spec, point.taus) - j_minus(spec, point.taus), options.tolerance);
  result.delta_history.push_back(point.delta);

  // With tau = 1 already on the deadline there is nothing to optimize.
  const bool pinned = deadline_ratio(spec, point.taus) >= 1.0 || (options.tau_cap && *options.tau_cap <= 1.0);
  if (!pinned) {
    for (int l = 1; l <= options.max_iterations; ++l) {
      const auto betas = agma_betas(spec, point.taus, point.delta);
      AgmaPoint next = agma_step(spec, point, betas, options.tau_cap);
      result.iterations = l;
      if (next.delta > point.delta) {
        // Numerical noise at the fixed point; keep the previous iterate.
        result.converged = true;
        break;
      }
      const double change = std::fabs(next.delta - point.delta);
      const double ref = std::max(std::fabs(point.delta), 1e-300);
      point = std::move(next);
      result.delta_history.push_back(point.delta);
      if (change < options.tolerance * ref) {
        result.converged = true;
        break;
      }
    }
  } else {
    result.converged = true;
  }
  result.taus_continuous = point.taus;
  result.objective_continuous = objective(spec, point.taus);

  // Floor, then local search over unit moves while the deadline holds.
  std::vector<int> taus(N);
  for (int n = 0; n < N; ++n) {
    taus[n] = std::max(1, static_cast<int>(std::floor(point.taus[n] + 1e-9)));
    if (int_cap) taus[n] = std::min(taus[n], *int_cap);
  }
  while (!integer_feasible(spec, taus)) {
    auto it = std::max_element(taus.begin(), taus.end());
    if (*it == 1) throw Error(ErrorCode::kNoFeasiblePoint, "no integer point meets the deadline");
    --*it;
  }
  auto admissible = [&](const std::vector<int>& c) {
    for (int v : c) {
      if (v < 1 || (int_cap && v > *int_cap)) return false;
    }
    return integer_feasible(spec, c);
  };
  double best = objective(spec, taus);
  for (int iter = 0; iter < 100000; ++iter) {
    std::vector<int> best_move;
    double best_value = best;
    auto consider = [&](std::vector<int> c) {
      if (!admissible(c)) return;
      const double v = objective(spec, c);
      if (v < best_value - 1e-15 * std::fabs(best_value)) {
        best_value = v;
        best_move = std::move(c);
      }
    };
    for (int i = 0; i < N; ++i) {
      for (int di : {+1, -1}) {
        auto c = taus;
        c[i] += di;
        consider(c);
      }
      for (int j = 0; j < N; ++j) {
        if (j == i) continue;
        auto c = taus;
        --c[i];
        ++c[j];
        consider(c);
      }
    }
    if (best_move.empty()) break;
    taus = std::move(best_move);
    best = best_value;
  }
  result.taus_integer = taus;
  result.objective_integer = best;
  result.slack = spec.deadline / spec.global_rounds - round_latency(spec.times, taus);
  if (result.slack < 0.0) result.slack = 0.0;  // rounding residue only; feasibility was checked multiplicatively
  return result;
}

BruteForceResult brute_force(const ObjectiveSpec& spec, std::span<const int> tau_max) {
  spec.validate();
  const int N = spec.num_layers();
  if (static_cast<int>(tau_max.size()) != N) throw Error(ErrorCode::kLengthMismatch, "one cap per layer");
  double space = 1.0;
  for (int m : tau_max) {
    if (m < 1) throw Error(ErrorCode::kNonPositiveTau, "caps must be at least 1");
    space *= m;
  }
  if (space > 1e7) throw Error(ErrorCode::kSearchTooLarge, "search space exceeds 1e7 points");

  BruteForceResult best;
  best.objective = kInf;
  std::vector<int> taus(N, 1);
  while (true) {
    ++best.points_visited;
    const bool feasible = integer_feasible(spec, taus);
    if (feasible) {
      const double v = objective(spec, taus);
      if (v < best.objective) {
        best.objective = v;
        best.taus = taus;
      }
    }
    // Latency grows with the last coordinate, so an infeasible point ends its row.
    int pos = N - 1;
    if (!feasible) {
      taus[pos] = tau_max[pos];
    }
    while (pos >= 0 && taus[pos] == tau_max[pos]) {
      taus[pos] = 1;
      --pos;
    }
    if (pos < 0) break;
    ++taus[pos];
  }
  if (best.taus.empty()) throw Error(ErrorCode::kNoFeasiblePoint, "no point in the grid meets the deadline");
  return best;
}

std::vector<double> closed_form_computation_limited(const ObjectiveSpec& spec, double negligible_ratio) {
  spec.validate();
  const int N = spec.num_layers();
  const double tcp = spec.times.t_cp;
  if (!(tcp > 0.0)) throw Error(ErrorCode::kRegimeViolation, "computation time must be positive");
  bool negligible = spec.times.t_de <= negligible_ratio * tcp;
  for (double e : spec.times.edge) negligible = negligible && e <= negligible_ratio * tcp;
  if (!negligible) throw Error(ErrorCode::kRegimeViolation, "communication times are not negligible");
  const double budget = spec.deadline / (spec.global_rounds * tcp);
  if (budget < 1.0) throw Error(ErrorCode::kRegimeViolation, "deadline allows less than one step per round");

  const auto coef = layer_coefficients(spec);
  int chosen = 0;
  for (int n = 1; n < N; ++n) {
    if (coef[n] <= coef[chosen]) chosen = n;
  }
  std::vector<double> taus(N, 1.0);
  taus[chosen] = budget;
  return taus;
}

}  // namespace qmlhfl
