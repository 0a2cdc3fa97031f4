// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <vector>

#include "qmlhfl/rng.hpp"
#include "qmlhfl/theory.hpp"
#include "test_support.hpp"

namespace qmlhfl {
namespace {

TheoryParams fig1_params(std::vector<double> q, std::vector<int> taus) {
  TheoryParams p;
  p.topology = testing::figure1_topology();
  p.q = std::move(q);
  p.taus = std::move(taus);
  p.lipschitz = 1.3;
  p.sigma2 = 2.0;
  p.gap0 = 5.0;
  p.mu = 1e-3;
  return p;
}

// Recursion written per node: A at a layer-1 node, then one level up at a time.
double oracle_A(const Topology& t, const std::vector<double>& q, const std::vector<int>& tau, NodeRef node) {
  const int n = node.layer;
  double iters = 1.0;
  for (int m = 1; m <= n + 1; ++m) iters *= tau[m - 1];
  const double cn = t.subtree_devices(node);
  if (n == 1) return cn * (q[1] * tau[0] * tau[1] + q[0] * (1.0 + q[1]) * tau[0] / cn);
  double best = 0.0;
  for (int c : t.children(node)) best = std::max(best, t.subtree_devices({n - 1, c}) * oracle_A(t, q, tau, {n - 1, c}));
  return cn * (q[n] * iters + best / cn * (1.0 + q[n]));
}

double oracle_A_max(const TheoryParams& p, int n) {
  double best = 0.0;
  for (int i = 0; i < p.topology.layer_size(n); ++i) best = std::max(best, oracle_A(p.topology, p.q, p.taus, {n, i}));
  return best;
}

// Coefficients of the condition 1 - L^2 mu^2 a - L mu b for N >= 2.
std::pair<double, double> oracle_condition_coeffs(const TheoryParams& p) {
  const int N = p.num_layers();
  const auto& t = p.taus;
  double a = t[0] * (t[0] - 1) / 2.0;
  for (int n = 2; n <= N; ++n) {
    double pre = 1.0;
    for (int m = 1; m <= n - 1; ++m) pre *= t[m - 1];
    a += t[n - 1] * (t[n - 1] - 1) / 2.0 * pre * pre;
  }
  a += p.q[0] * t[1] * t[0] * t[0];
  for (int n = 1; n <= N - 2; ++n) {
    double pre = 1.0;
    for (int m = 1; m <= n + 2; ++m) pre *= t[m - 1];
    a += pre * oracle_A_max(p, n);
  }
  double b = 1.0;
  for (int v : t) b *= v;
  b += oracle_A_max(p, N - 1) / p.topology.num_devices();
  return {a, b};
}

TEST(Theory, RecursionOnFigureOne) {
  // q = 1, tau = 1: layer-1 values are C + 2, layer 2 takes 4 + 2 * 15 and 7 + 2 * 35.
  const auto p = fig1_params({1.0, 1.0, 1.0}, {1, 1, 1});
  const auto a1 = recursion_A_nodes(p, 1);
  EXPECT_EQ(a1, (std::vector<double>{5.0, 3.0, 4.0, 7.0}));
  EXPECT_EQ(recursion_A(p, 1), 7.0);
  const auto a2 = recursion_A_nodes(p, 2);
  EXPECT_EQ(a2, (std::vector<double>{34.0, 77.0}));
}

TEST(Theory, RecursionMatchesOracle) {
  RandomStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> q(3);
    std::vector<int> taus(3);
    for (auto& v : q) v = rng.uniform(0.0, 0.5);
    for (auto& v : taus) v = static_cast<int>(rng.integer(1, 6));
    const auto p = fig1_params(q, taus);
    for (int n = 1; n <= 2; ++n) EXPECT_NEAR(recursion_A(p, n), oracle_A_max(p, n), 1e-12 * oracle_A_max(p, n));
    const auto [a, b] = oracle_condition_coeffs(p);
    const double L = p.lipschitz, mu = p.mu;
    EXPECT_NEAR(condition_lhs(p), 1.0 - L * L * mu * mu * a - L * mu * b, 1e-12);
  }
}

TEST(Theory, SingleLayerCondition) {
  TheoryParams p;
  p.topology = Topology::from_fanouts(std::vector<int>{4});
  p.q = {0.3};
  p.taus = {5};
  p.lipschitz = 2.0;
  p.mu = 0.01;
  EXPECT_NEAR(condition_lhs(p), 1.0 - 4.0 * 1e-4 * 10.0 - 2.0 * 0.01 * 5.0, 1e-15);
}

TEST(Theory, UnquantizedMatchesCorollaryOne) {
  RandomStream rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> taus(3);
    for (auto& v : taus) v = static_cast<int>(rng.integer(1, 8));
    auto p = fig1_params({0.0, 0.0, 0.0}, taus);
    p.mu = rng.uniform(1e-4, 1e-2);
    EXPECT_NEAR(condition_lhs(p), corollary1_condition(p), 1e-12);
    const auto full = rate_bound(p, 50);
    const auto c1 = corollary1_bound(p, 50);
    EXPECT_NEAR(full.speed_term, c1.speed_term, 1e-12 * c1.speed_term);
    EXPECT_NEAR(full.error_term, c1.error_term, 1e-12 * c1.error_term);
    EXPECT_NEAR(full.total, c1.total, 1e-12 * c1.total);
  }
}

TEST(Theory, TwoLayerMatchesCorollaryTwo) {
  const std::vector<int> sizes{7, 3, 1};
  const std::vector<int> parents{7, 7, 8, 8, 8, 9, 9, 10, 10, 10};
  const Topology nonuniform = Topology::build(sizes, parents);
  RandomStream rng(5);
  for (const Topology& topo : {nonuniform, Topology::from_fanouts(std::vector<int>{3, 4})}) {
    for (int trial = 0; trial < 10; ++trial) {
      TheoryParams p;
      p.topology = topo;
      p.q = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
      p.taus = {static_cast<int>(rng.integer(1, 10)), static_cast<int>(rng.integer(1, 10))};
      p.mu = rng.uniform(1e-4, 1e-2);
      p.sigma2 = 1.5;
      p.gap0 = 3.0;
      EXPECT_NEAR(condition_lhs(p), corollary2_condition(p), 1e-12);
      const auto full = rate_bound(p, 20);
      const auto c2 = corollary2_bound(p, 20);
      EXPECT_NEAR(full.total, c2.total, 1e-12 * c2.total);
    }
  }
}

TEST(Theory, HandComputedBound) {
  TheoryParams p;
  p.topology = Topology::from_fanouts(std::vector<int>{1});
  p.q = {0.0};
  p.taus = {2};
  p.mu = 0.1;
  p.sigma2 = 1.0;
  p.gap0 = 1.0;
  const auto b = rate_bound(p, 10);
  EXPECT_NEAR(b.speed_term, 1.0, 1e-15);
  EXPECT_NEAR(b.error_term, 0.105, 1e-15);
  EXPECT_NEAR(b.total, 1.105, 1e-15);
}

TEST(Theory, ErrorBracket) {
  const std::vector<int> counts{4, 2};
  const std::vector<double> taus{3.0, 2.0, 5.0}, q{0.5, 1.0, 0.0};
  // 2 + (4/12)(1)(1.5)(3) + (2/12)(4)(1.5 * 2)(6)
  EXPECT_NEAR(error_bracket(counts, 12, taus, q), 2.0 + 1.5 + 12.0, 1e-13);
}

TEST(Theory, ErrorTermGrowsWithQuantization) {
  auto p = fig1_params({0.1, 0.1, 0.1}, {4, 2, 2});
  double prev = rate_bound(p, 10).error_term;
  for (double q : {0.2, 0.5, 1.0}) {
    p.q = {q, q, q};
    const double e = rate_bound(p, 10).error_term;
    EXPECT_GT(e, prev);
    prev = e;
  }
}

TEST(Theory, MaxFeasibleMuSingleLayerClosedForm) {
  for (int tau : {1, 2, 5, 20}) {
    TheoryParams p;
    p.topology = Topology::from_fanouts(std::vector<int>{3});
    p.q = {0.0};
    p.taus = {tau};
    p.lipschitz = 1.7;
    const double a = p.lipschitz * p.lipschitz * tau * (tau - 1) / 2.0, b = p.lipschitz * tau;
    const double root = a == 0.0 ? 1.0 / b : (-b + std::sqrt(b * b + 4.0 * a)) / (2.0 * a);
    EXPECT_NEAR(max_feasible_mu(p), root, 1e-9 * root);
  }
}

TEST(Theory, MaxFeasibleMuDeepTree) {
  auto p = fig1_params({0.2, 0.4, 0.1}, {5, 3, 2});
  const auto [a, b] = oracle_condition_coeffs(p);
  const double L = p.lipschitz;
  // 1 - A x^2 - B x with x = mu.
  const double A = L * L * a, B = L * b;
  const double root = (-B + std::sqrt(B * B + 4.0 * A)) / (2.0 * A);
  const double mu = max_feasible_mu(p);
  EXPECT_NEAR(mu, root, 1e-9 * root);
  p.mu = mu;
  EXPECT_GE(condition_lhs(p), 0.0);
  p.mu = mu * (1.0 + 1e-8);
  EXPECT_LT(condition_lhs(p), 0.0);
}

TEST(Theory, FeasibleMuShrinksWithTau) {
  auto p = fig1_params({0.1, 0.1, 0.1}, {1, 1, 1});
  double prev = max_feasible_mu(p);
  for (int t : {2, 4, 8}) {
    p.taus = {t, 2, 2};
    const double mu = max_feasible_mu(p);
    EXPECT_LT(mu, prev);
    prev = mu;
  }
}

TEST(Theory, Errors) {
  TheoryParams single;
  single.topology = Topology::from_fanouts(std::vector<int>{4});
  single.q = {0.0};
  single.taus = {2};
  EXPECT_QMLHFL_ERROR(recursion_A(single, 1), ErrorCode::kNeedsTwoLayers);
  EXPECT_QMLHFL_ERROR(corollary2_condition(single), ErrorCode::kWrongSpecialization);

  auto p = fig1_params({0.1, 0.0, 0.0}, {2, 2, 2});
  EXPECT_QMLHFL_ERROR(recursion_A(p, 3), ErrorCode::kLayerOutOfRange);
  EXPECT_QMLHFL_ERROR(recursion_A(p, 0), ErrorCode::kLayerOutOfRange);
  EXPECT_QMLHFL_ERROR(corollary1_condition(p), ErrorCode::kWrongSpecialization);
  EXPECT_QMLHFL_ERROR(corollary1_bound(p, 1), ErrorCode::kWrongSpecialization);
  auto bad = p;
  bad.q = {0.1};
  EXPECT_QMLHFL_ERROR(condition_lhs(bad), ErrorCode::kLengthMismatch);
  bad = p;
  bad.taus = {2, 0, 2};
  EXPECT_QMLHFL_ERROR(condition_lhs(bad), ErrorCode::kNonPositiveTau);
  bad = p;
  bad.mu = 0.0;
  EXPECT_QMLHFL_ERROR(rate_bound(bad, 1), ErrorCode::kInvalidParams);
  EXPECT_QMLHFL_ERROR(rate_bound(p, 0), ErrorCode::kInvalidParams);
}

}  // namespace
}  // namespace qmlhfl
