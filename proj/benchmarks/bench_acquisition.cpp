#include <benchmark/benchmark.h>

#include "epiglab/acquisition.hpp"
#include "epiglab/rng.hpp"

namespace {

epiglab::ProbCube random_cube(std::size_t k, std::size_t n, std::size_t c, std::uint64_t seed) {
  epiglab::Rng rng(seed);
  epiglab::ProbCube cube(k, n, c);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = cube.row(m, i);
      double sum = 0.0;
      for (auto& v : row) sum += v = rng.uniform01() + 1e-3;
      for (auto& v : row) v /= sum;
    }
  }
  return cube;
}

// Pool size varies; 100 members, 100 targets, 10 classes as in the speed criterion.
void BM_EpigScores(benchmark::State& state) {
  const auto pool = random_cube(100, static_cast<std::size_t>(state.range(0)), 10, 1);
  const auto target = random_cube(100, 100, 10, 2);
  for (auto _ : state) benchmark::DoNotOptimize(epiglab::epig_scores(pool, target));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EpigScores)->Arg(1'000)->Arg(10'000)->Unit(benchmark::kMillisecond);

void BM_BaldScores(benchmark::State& state) {
  const auto pool = random_cube(100, static_cast<std::size_t>(state.range(0)), 10, 1);
  for (auto _ : state) benchmark::DoNotOptimize(epiglab::bald_scores(pool));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BaldScores)->Arg(1'000)->Arg(10'000)->Unit(benchmark::kMillisecond);

}  // namespace
