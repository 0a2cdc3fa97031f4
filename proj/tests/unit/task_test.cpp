// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "qmlhfl/task.hpp"
#include "test_support.hpp"

namespace qmlhfl {
namespace {

LocalDataset points(std::initializer_list<std::vector<double>> xs) {
  LocalDataset ds;
  for (const auto& x : xs) ds.samples.push_back(Sample{x, 0});
  return ds;
}

TEST(Task, QuadraticLocalLoss) {
  const Task t = Task::quadratic({points({{1.0}, {3.0}}), points({{2.0}})});
  const std::vector<double> at_anchor{2.0};
  EXPECT_DOUBLE_EQ(t.local_loss(0, at_anchor), 0.0);
  const std::vector<double> zero{0.0};
  EXPECT_DOUBLE_EQ(t.local_loss(1, zero), 2.0);
  const auto g = t.local_gradient(1, zero);
  EXPECT_DOUBLE_EQ(g[0], -2.0);
}

TEST(Task, LogisticLossAtZeroIsLogTwo) {
  LocalDataset ds;
  ds.samples = {{{1.0, 2.0}, 0}, {{-1.0, 0.5}, 1}, {{0.3, -0.7}, 1}, {{2.0, 2.0}, 0}};
  const Task t = Task::logistic({ds}, 2);
  const std::vector<double> w(t.dimension(), 0.0);
  EXPECT_NEAR(t.local_loss(0, w), std::log(2.0), 1e-15);
}

TEST(Task, GlobalLossExamples) {
  const Task t = Task::quadratic({points({{0.0, 0.0}}), points({{2.0, 2.0}, {2.0, 2.0}, {2.0, 2.0}})});
  const Topology topo = Topology::from_fanouts(std::vector<int>{2});
  const std::vector<double> w{0.0, 0.0};
  EXPECT_DOUBLE_EQ(global_loss(t, topo, w, false), 2.0);
  EXPECT_DOUBLE_EQ(global_loss(t, topo, w, true), 3.0);
  EXPECT_DOUBLE_EQ(global_loss_flat(t, w, true), 3.0);
}

TEST(Task, ConstantLossesOnFigure1) {
  std::vector<LocalDataset> data;
  for (int i = 0; i < 11; ++i) {
    LocalDataset ds;
    for (int k = 0; k <= i; ++k) ds.samples.push_back(Sample{{1.0, -1.0}, 0});
    data.push_back(ds);
  }
  const Task t = Task::quadratic(data);
  const std::vector<double> w{3.0, 1.0};
  const double c = 0.5 * (4.0 + 4.0);
  EXPECT_DOUBLE_EQ(global_loss(t, testing::figure1_topology(), w, false), c);
  EXPECT_DOUBLE_EQ(global_loss(t, testing::figure1_topology(), w, true), c);
}

TEST(Task, HierarchicalLossMatchesFlat) {
  RandomStream rng(derive_seed(11, {1}));
  const Topology topo = testing::figure1_topology();
  const Task t = make_random_quadratic_task(11, 5, 2.0, 3, 17, 0.7, rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w(5);
    for (double& v : w) v = 3.0 * rng.normal();
    for (bool weighted : {false, true}) {
      const double flat = global_loss_flat(t, w, weighted);
      EXPECT_NEAR(global_loss(t, topo, w, weighted), flat, 1e-12 * std::fabs(flat));
    }
  }
}

TEST(Task, QuadraticOptimumHasZeroGradient) {
  // Dyadic anchors and a power-of-two device count keep the mean exact.
  const Task t = Task::quadratic({points({{1.0, 0.5}}), points({{-2.0, 0.25}}), points({{0.5, 4.0}}),
                                  points({{3.0, -1.0}})});
  const std::vector<double> w_star{0.625, 0.9375};
  const auto g = global_gradient(t, w_star, false);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Task, FullBatchIsExactGradient) {
  RandomStream rng(derive_seed(3, {2}));
  const Task t = make_random_quadratic_task(2, 3, 1.0, 8, 8, 1.0, rng);
  const std::vector<double> w{0.1, -0.2, 0.3};
  RandomStream batch(5);
  const auto sg = t.stochastic_gradient(0, w, 8, batch);
  const auto g = t.local_gradient(0, w);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(sg[j], g[j], 1e-15);
}

TEST(Task, StochasticGradientIsUnbiased) {
  RandomStream rng(derive_seed(4, {2}));
  const Task t = make_random_quadratic_task(1, 3, 1.0, 12, 12, 1.5, rng);
  const std::vector<double> w{0.4, 0.0, -1.0};
  const auto full = t.local_gradient(0, w);
  const int M = 100000;
  std::vector<double> sum(3, 0.0), sum_sq(3, 0.0);
  RandomStream batch(derive_seed(4, {9}));
  for (int m = 0; m < M; ++m) {
    const auto g = t.stochastic_gradient(0, w, 3, batch);
    for (int j = 0; j < 3; ++j) {
      sum[j] += g[j];
      sum_sq[j] += g[j] * g[j];
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double mean = sum[j] / M;
    const double sd = std::sqrt(std::max(0.0, sum_sq[j] / M - mean * mean));
    EXPECT_LE(std::fabs(mean - full[j]), 4.0 * sd / std::sqrt(M)) << "coordinate " << j;
  }
}

TEST(Task, StochasticGradientDeterministicAndChecked) {
  RandomStream rng(derive_seed(5, {2}));
  const Task t = make_random_quadratic_task(1, 2, 1.0, 10, 10, 1.0, rng);
  const std::vector<double> w{0.0, 0.0};
  RandomStream a(77), b(77);
  EXPECT_EQ(t.stochastic_gradient(0, w, 4, a), t.stochastic_gradient(0, w, 4, b));
  RandomStream c(1);
  EXPECT_QMLHFL_ERROR(t.stochastic_gradient(0, w, 11, c), ErrorCode::kBatchTooLarge);
  EXPECT_QMLHFL_ERROR(t.stochastic_gradient(3, w, 1, c), ErrorCode::kUnknownDevice);
}

TEST(Task, ExactSigma2MatchesEstimate) {
  RandomStream rng(derive_seed(6, {2}));
  const Task t = make_random_quadratic_task(4, 3, 1.0, 10, 14, 1.0, rng);
  const std::vector<double> w0{0.3, 0.3, 0.3};
  const double exact = quadratic_sigma2(t, 4);
  const double est = estimate_sigma2(t, w0, 4, 40000, 13);
  EXPECT_NEAR(est, exact, 0.03 * exact);
  // Full batch leaves only the drift between device and global gradients.
  EXPECT_LT(quadratic_sigma2(t, 0), exact);
}

// Central finite differences against the analytic gradients.
void check_gradient(const Task& t, std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<double> w(t.dimension());
  for (double& v : w) v = 0.3 * rng.normal();
  const auto g = t.local_gradient(0, w);
  for (std::size_t j = 0; j < w.size(); j += 3) {
    auto up = w, down = w;
    const double h = 1e-6;
    up[j] += h;
    down[j] -= h;
    const double fd = (t.local_loss(0, up) - t.local_loss(0, down)) / (2 * h);
    EXPECT_NEAR(g[j], fd, 1e-6 * std::max(1.0, std::fabs(fd))) << "coordinate " << j;
  }
}

TEST(Task, ClassifierGradients) {
  RandomStream rng(derive_seed(8, {1}));
  const LabeledPool pool = make_synthetic_pool(3, 4, 10, 2.0, rng);
  LocalDataset ds;
  ds.samples = pool.samples;
  check_gradient(Task::logistic({ds}, 3), 21);
  check_gradient(Task::tiny_mlp({ds}, 3, 5), 22);
}

TEST(Task, PartitionCases) {
  RandomStream rng(derive_seed(9, {1}));
  const LabeledPool pool = make_synthetic_pool(10, 4, 200, 2.0, rng);
  const Topology topo = Topology::from_fanouts(std::vector<int>{3, 2});
  const std::map<int, std::size_t> expected{{1, 2}, {2, 6}, {3, 10}};
  for (const auto& [c, labels] : expected) {
    RandomStream part(derive_seed(9, {2, static_cast<std::uint64_t>(c)}));
    const auto data = partition(pool, topo, c, 50, 150, part);
    ASSERT_EQ(data.size(), 6u);
    for (const auto& ds : data) {
      std::set<int> seen;
      for (const auto& s : ds.samples) seen.insert(s.label);
      EXPECT_EQ(seen.size(), labels) << "case " << c;
      EXPECT_GE(ds.size(), 50u);
      EXPECT_LE(ds.size(), 150u);
    }
  }
  RandomStream part(1);
  const LabeledPool small = make_synthetic_pool(4, 2, 50, 2.0, rng);
  EXPECT_QMLHFL_ERROR(partition(small, topo, 2, 10, 20, part), ErrorCode::kInsufficientPool);
  EXPECT_QMLHFL_ERROR(partition(small, topo, 3, 250, 300, part), ErrorCode::kInsufficientPool);
}

TEST(Task, LoadPoolCsv) {
  const auto path = std::filesystem::temp_directory_path() / "qmlhfl_pool_test.csv";
  {
    std::ofstream f(path);
    f << "# comment\nx1,x2,label\n0.5,1.5,0\n-1,2,2\n3,4,1\n";
  }
  const LabeledPool pool = load_pool_csv(path);
  EXPECT_EQ(pool.samples.size(), 3u);
  EXPECT_EQ(pool.num_classes, 3);
  EXPECT_EQ(pool.feature_dim(), 2u);
  EXPECT_EQ(pool.samples[1].label, 2);
  EXPECT_DOUBLE_EQ(pool.samples[1].features[0], -1.0);
  {
    std::ofstream f(path);
    f << "1,2,0\n1,2,0.5\n";
  }
  EXPECT_QMLHFL_ERROR(load_pool_csv(path), ErrorCode::kIoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace qmlhfl
