#include <numeric>

#include <benchmark/benchmark.h>

#include "epiglab/heads.hpp"

namespace {

struct Fixture {
  epiglab::SyntheticData data;
  epiglab::Dataset train;
  epiglab::Matrix pool;
};

Fixture make(std::size_t train_size) {
  epiglab::SyntheticSpec spec;
  spec.classes = 10;
  spec.per_class = 1'000;
  spec.latent_dim = 32;
  spec.raw_dim = 32;
  Fixture f{epiglab::make_synthetic(spec, 3), {}, {}};
  std::vector<std::size_t> rows(train_size);
  std::iota(rows.begin(), rows.end(), 0);
  f.train = {epiglab::gather(f.data.latent, rows), epiglab::gather(f.data.labels, rows)};
  std::vector<std::size_t> all(f.data.latent.n());
  std::iota(all.begin(), all.end(), 0);
  f.pool = epiglab::gather(f.data.latent, all);
  return f;
}

void BM_ForestFit(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)));
  epiglab::HeadConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(epiglab::fit(cfg, f.train, 10, nullptr, 0));
}
BENCHMARK(BM_ForestFit)->Arg(20)->Arg(300)->Unit(benchmark::kMillisecond);

// Predicting a 10,000-point pool with 100 trees.
void BM_ForestPredict(benchmark::State& state) {
  const Fixture f = make(static_cast<std::size_t>(state.range(0)));
  epiglab::HeadConfig cfg;
  const auto head = epiglab::fit(cfg, f.train, 10, nullptr, 0);
  for (auto _ : state) benchmark::DoNotOptimize(head.predict_members(f.pool, 100, 0));
}
BENCHMARK(BM_ForestPredict)->Arg(20)->Arg(300)->Unit(benchmark::kMillisecond);

}  // namespace
