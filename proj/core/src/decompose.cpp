#include "epiglab/decompose.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "epiglab/acquisition.hpp"
#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {
constexpr std::uint64_t kSubsetStream = 0x5355425345;
constexpr std::uint64_t kFitStream = 0x464954;
constexpr std::uint64_t kPredictStream = 0x50524544;
}  // namespace

Decomposition decompose(const ProbCube& cube) {
  Decomposition out;
  out.total.resize(cube.n());
  out.reducible.resize(cube.n());
  out.irreducible.resize(cube.n());
  std::vector<double> mixture(cube.c());
  for (std::size_t i = 0; i < cube.n(); ++i) {
    std::fill(mixture.begin(), mixture.end(), 0.0);
    double mean_entropy = 0.0;
    for (std::size_t m = 0; m < cube.k(); ++m) {
      auto row = cube.row(m, i);
      for (std::size_t y = 0; y < cube.c(); ++y) mixture[y] += row[y];
      mean_entropy += entropy(row);
    }
    const double k = static_cast<double>(std::max<std::size_t>(cube.k(), 1));
    for (double& p : mixture) p /= k;
    out.total[i] = entropy(mixture);
    out.irreducible[i] = mean_entropy / k;
    out.reducible[i] = out.total[i] - out.irreducible[i];
  }
  return out;
}

std::vector<std::size_t> balanced_sample(const LabelVector& labels, std::span<const std::size_t> pool,
                                         std::size_t count, std::uint64_t seed) {
  const auto C = static_cast<std::size_t>(labels.classes());
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t idx : pool) {
    if (labels.known(idx)) by_class[static_cast<std::size_t>(labels[idx])].push_back(idx);
  }
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t quota = count / C + (c < count % C ? 1 : 0);
    if (by_class[c].size() < quota) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " labelled pool examples, a balanced sample of " + std::to_string(count) + " needs " +
                      std::to_string(quota));
    }
    auto drawn = rng.sample(by_class[c], quota);
    out.insert(out.end(), drawn.begin(), drawn.end());
  }
  return out;
}

std::vector<ScatterRow> size_contrast(const SizeContrastConfig& config, const EmbeddingTable& features,
                                      const LabelVector& labels, const SplitSpec& split) {
  if (config.n_small > config.n_large) throw ConfigError("size_contrast: n_small must not exceed n_large");
  if (split.test.empty()) throw ConfigError("size_contrast: empty test split");
  // Same contract as the loop: neural heads early-stop on validation NLL.
  if (config.head.is_neural() && split.validation.empty()) {
    throw ConfigError("size_contrast: " + to_string(config.head.kind) + " head needs a non-empty validation split");
  }
  const Matrix test_x = gather(features, split.test);
  Dataset validation{gather(features, split.validation), gather(labels, split.validation)};
  std::vector<ScatterRow> rows;
  for (std::uint64_t seed : config.seeds) {
    const std::size_t sizes[2] = {config.n_small, config.n_large};
    for (std::size_t arm = 0; arm < 2; ++arm) {
      const std::size_t size = sizes[arm];
      auto subset = balanced_sample(labels, split.pool, size, derive_seed(seed, kSubsetStream, arm));
      Dataset train{gather(features, subset), gather(labels, subset)};
      FittedHead head = fit(config.head, train, labels.classes(), &validation, derive_seed(seed, kFitStream, arm));
      ProbCube cube = head.predict_members(test_x, config.members, derive_seed(seed, kPredictStream, arm));
      Decomposition d = decompose(cube);
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        rows.push_back({seed, size, split.test[i], d.total[i], d.reducible[i], d.irreducible[i]});
      }
    }
  }
  return rows;
}

void write_scatter_csv(std::ostream& out, const std::vector<ScatterRow>& rows) {
  out << "seed,size,input_index,total,reducible,irreducible\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%zu,%.10g,%.10g,%.10g\n", static_cast<unsigned long long>(r.seed), r.size,
                  r.input_index, r.total, r.reducible, r.irreducible);
    out << buf;
  }
}

}  // namespace epiglab
