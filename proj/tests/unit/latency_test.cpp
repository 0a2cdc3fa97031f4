// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "qmlhfl/latency.hpp"
#include "test_support.hpp"

namespace qmlhfl {
namespace {

TEST(Latency, ComputationTime) {
  LatencyParams p;
  EXPECT_DOUBLE_EQ(compute_tcp(p), 20.0);
  p.frequencies = {1e9, 0.25e9, 2e9};
  EXPECT_DOUBLE_EQ(compute_tcp(p), 40.0);
}

TEST(Latency, CommunicationTime) {
  LatencyParams p;
  p.model_bits = 32000.0;
  // p h / N0 = 50.
  EXPECT_NEAR(compute_tde(p), 32000.0 / (1e6 * std::log2(51.0)), 1e-15);
  p.kappa = 10.0;
  const double snr = 50.0 * std::pow(10.0, -3.4);
  EXPECT_NEAR(compute_tde(p), 32000.0 / (1e6 * std::log2(1.0 + snr)), 1e-12);
}

TEST(Latency, ModelBitsFromDimension) {
  LatencyParams p;
  p.resolve_model_bits(100);
  EXPECT_EQ(p.model_bits, 3200.0);
  p.resolve_model_bits(5);
  EXPECT_EQ(p.model_bits, 3200.0);
}

TEST(Latency, SingleLayer) {
  const RoundTimes t{20.0, 0.5, {}};
  const std::vector<int> taus{7};
  EXPECT_DOUBLE_EQ(round_latency(t, taus), 7 * 20.0 + 0.5);
}

TEST(Latency, TwoLayerExpansion) {
  const RoundTimes t{20.0, 0.3, {4.0}};
  const std::vector<int> taus{5, 3};
  EXPECT_DOUBLE_EQ(round_latency(t, taus), 15 * 20.0 + 3 * 0.3 + 4.0);
}

TEST(Latency, GeneralExpansion) {
  const RoundTimes t{2.0, 0.5, {1.0, 3.0, 7.0}};
  const std::vector<int> taus{2, 3, 4, 5};
  // prod(tau) t_CP + tau2 tau3 tau4 t_DE + tau3 tau4 t_E12 + tau4 t_E23 + t_E34
  const double expected = 120 * 2.0 + 60 * 0.5 + 20 * 1.0 + 5 * 3.0 + 7.0;
  EXPECT_DOUBLE_EQ(round_latency(t, taus), expected);
  const std::vector<double> real{2.0, 3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(round_latency_real(t, real), expected);
}

TEST(Latency, FromParams) {
  LatencyParams p;
  p.model_bits = 1e5;
  p.edge_times = {2.0};
  const std::vector<int> taus{4, 2};
  EXPECT_DOUBLE_EQ(round_latency(p, taus), 8 * 20.0 + 2 * compute_tde(p) + 2.0);
}

TEST(Latency, Deadline) {
  LatencyParams p;
  p.model_bits = 0.0;
  p.global_rounds = 10;
  const std::vector<int> taus{3};  // 60 s per round
  p.deadline = 600.0;
  auto d = deadline_ok(p, taus);
  EXPECT_TRUE(d.ok);
  EXPECT_EQ(d.slack, 0.0);
  p.deadline = 700.0;
  d = deadline_ok(p, taus);
  EXPECT_TRUE(d.ok);
  EXPECT_DOUBLE_EQ(d.slack, 10.0);
  p.deadline = 500.0;
  d = deadline_ok(p, taus);
  EXPECT_FALSE(d.ok);
  EXPECT_DOUBLE_EQ(d.slack, -10.0);
}

TEST(Latency, ScaledEdgeTimes) {
  EXPECT_TRUE(scaled_edge_times(1, 2.0).empty());
  EXPECT_EQ(scaled_edge_times(4, 0.5), (std::vector<double>{5.0, 10.0, 15.0}));
}

TEST(Latency, Errors) {
  const RoundTimes t{1.0, 1.0, {1.0}};
  const std::vector<int> three{1, 1, 1};
  EXPECT_QMLHFL_ERROR(round_latency(t, three), ErrorCode::kLengthMismatch);
  const std::vector<int> bad{1, 0};
  EXPECT_QMLHFL_ERROR(round_latency(t, bad), ErrorCode::kNonPositiveTau);
  LatencyParams p;
  p.bandwidth = 0.0;
  EXPECT_QMLHFL_ERROR(compute_tde(p), ErrorCode::kNonPositiveRate);
  p = LatencyParams{};
  p.power = 0.0;
  EXPECT_QMLHFL_ERROR(compute_tde(p), ErrorCode::kNonPositiveRate);
  p = LatencyParams{};
  p.frequencies = {1e9, 0.0};
  EXPECT_QMLHFL_ERROR(compute_tcp(p), ErrorCode::kInvalidParams);
}

}  // namespace
}  // namespace qmlhfl
