#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "epiglab/data.hpp"
#include "epiglab/heads.hpp"
#include "epiglab/prob_cube.hpp"

namespace epiglab {

/// Per-input uncertainty split, in nats:
///   total       = H[mean_k p_k]
///   irreducible = mean_k H[p_k]
///   reducible   = total - irreducible
struct Decomposition {
  std::vector<double> total;
  std::vector<double> reducible;
  std::vector<double> irreducible;
};

Decomposition decompose(const ProbCube& cube);

struct SizeContrastConfig {
  HeadConfig head;
  std::size_t n_small = 10;
  std::size_t n_large = 1'000;
  std::vector<std::uint64_t> seeds;
  std::size_t members = 200;  // samples for dropout / laplace heads
};

struct ScatterRow {
  std::uint64_t seed;
  std::size_t size;
  std::size_t input_index;
  double total;
  double reducible;
  double irreducible;
};

/// For each seed and each of the two sizes, trains the head on a
/// class-balanced random subset of the pool and decomposes its predictions on
/// the test split. Labels are in task space. Throws DataError when a class
/// has too few labelled pool examples, ConfigError for a neural head without
/// a validation split.
std::vector<ScatterRow> size_contrast(const SizeContrastConfig& config, const EmbeddingTable& features,
                                      const LabelVector& labels, const SplitSpec& split);

/// Class-balanced uniform draw of `count` indices from `pool` (remainder goes
/// to the lowest classes).
std::vector<std::size_t> balanced_sample(const LabelVector& labels, std::span<const std::size_t> pool,
                                         std::size_t count, std::uint64_t seed);

/// `seed,size,input_index,total,reducible,irreducible`
void write_scatter_csv(std::ostream& out, const std::vector<ScatterRow>& rows);

}  // namespace epiglab
