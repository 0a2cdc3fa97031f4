// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "qmlhfl/engine.hpp"
#include "qmlhfl/rng.hpp"
#include "qmlhfl/task.hpp"
#include "qmlhfl/topology.hpp"

namespace {

// One global round on a uniform tree; range(0) = layers, range(1) = model dimension.
void BM_GlobalRound(benchmark::State& state) {
  const int layers = static_cast<int>(state.range(0));
  const int dim = static_cast<int>(state.range(1));
  const std::vector<int> fanouts(layers, 2);
  const auto topo = qmlhfl::Topology::from_fanouts(fanouts);
  qmlhfl::RandomStream rng(5);
  const auto task = qmlhfl::make_random_quadratic_task(topo.num_devices(), dim, 1.0, 20, 40, 0.5, rng);
  const std::vector<qmlhfl::QuantizerSpec> qs(layers, qmlhfl::QuantizerSpec::stochastic(8));
  qmlhfl::RunOptions opt;
  opt.batch_size = 8;
  const qmlhfl::Schedule schedule{std::vector<int>(layers, 2), 1};
  for (auto _ : state) {
    auto m = qmlhfl::run(task, topo, schedule, qs, opt);
    benchmark::DoNotOptimize(m.final_model.data());
  }
}
BENCHMARK(BM_GlobalRound)->Args({2, 8})->Args({4, 8})->Args({4, 256})->Args({6, 8})->Unit(benchmark::kMillisecond);

}  // namespace
