// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "qmlhfl/quantizer.hpp"
#include "qmlhfl/rng.hpp"

namespace {

void BM_QuantizeInto(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto spec = qmlhfl::QuantizerSpec::stochastic(static_cast<int>(state.range(1)));
  qmlhfl::RandomStream gen(1);
  std::vector<double> x(d), out(d);
  for (double& v : x) v = gen.normal();
  qmlhfl::RandomStream rng(2);
  for (auto _ : state) {
    qmlhfl::quantize_into(spec, x, rng, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d));
}
BENCHMARK(BM_QuantizeInto)->Args({64, 8})->Args({1024, 8})->Args({16384, 8})->Args({16384, 256});

void BM_MeasureQ(benchmark::State& state) {
  for (auto _ : state) {
    auto spec = qmlhfl::QuantizerSpec::stochastic(8);
    benchmark::DoNotOptimize(qmlhfl::measure_q(spec, static_cast<int>(state.range(0)), 1000, 3));
  }
}
BENCHMARK(BM_MeasureQ)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
