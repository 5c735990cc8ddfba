#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epiglab/data.hpp"
#include "epiglab/prob_cube.hpp"

namespace epiglab {

/// One score per pool position, in nats for the information-theoretic scorers.
using ScoreVector = std::vector<double>;

/// Probabilities below this are clamped inside logarithms.
inline constexpr double kLogClamp = 1e-12;

/// Shannon entropy in nats with 0 log 0 = 0. Entries below -1e-12 throw
/// DomainError.
double entropy(std::span<const double> p);

ScoreVector max_entropy_scores(const ProbCube& cube);

/// Mixture entropy minus mean member entropy, exact over the members.
ScoreVector bald_scores(const ProbCube& cube);

/// For each pool input, the mean over targets of the mutual information
/// between its label and the target's label under the member-averaged joint
///   p(y, y*) = 1/K sum_k p_k(y | x) p_k(y* | x*).
/// Both cubes must share the member set. Throws ShapeError otherwise.
ScoreVector epig_scores(const ProbCube& pool, const ProbCube& target);

std::vector<std::size_t> random_select(std::span<const std::size_t> pool, std::size_t batch, std::uint64_t seed);

/// `scores[p]` belongs to `pool[p]`. Returns the `batch` best pool indices,
/// breaking ties uniformly at random. NaN throws ScoringError.
std::vector<std::size_t> select_top(std::span<const double> scores, std::span<const std::size_t> pool,
                                    std::size_t batch, std::uint64_t seed);

/// Greedy farthest-point selection against labelled ∪ already picked. With no
/// labelled points the first pick is the pool point farthest from the origin.
std::vector<std::size_t> kcentre_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                        std::span<const std::size_t> pool, std::size_t batch);

/// k-means with k = batch over the pool; returns the pool point nearest each
/// centroid (next-nearest when already taken).
std::vector<std::size_t> kmeans_select(const EmbeddingTable& embeddings, std::span<const std::size_t> pool,
                                       std::size_t batch, std::uint64_t seed);

inline constexpr std::size_t kTypicalityNeighbours = 20;

std::vector<std::size_t> typiclust_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                          std::span<const std::size_t> pool, std::size_t batch, std::uint64_t seed);

struct ProbCoverConfig {
  double radius = 0.0;  // 0 = tune from the grid
  double purity_target = 0.95;
  std::vector<double> grid;  // empty = default_radius_grid
  std::uint64_t seed = 0;    // pseudo-label clustering
};

struct ProbCoverTuning {
  double radius = 0.0;
  std::vector<std::pair<double, double>> curve;  // (delta, purity) per grid point
};

/// Fraction of points whose closed ball of radius delta holds only points of
/// its own pseudo-label.
std::vector<double> probcover_purity(const Matrix& points, std::span<const std::size_t> pseudo_labels,
                                     std::span<const double> grid);

/// Pseudo-labels from seeded k-means (k = num_classes) over `rows` of the
/// table, then the largest grid radius whose purity meets the target. Throws
/// TuningError reporting the best purity when no grid point qualifies.
ProbCoverTuning probcover_tune_radius(const EmbeddingTable& embeddings, std::span<const std::size_t> rows,
                                      int num_classes, const ProbCoverConfig& config);

/// 30 evenly spaced radii up to the median pairwise distance of `rows`.
std::vector<double> default_radius_grid(const EmbeddingTable& embeddings, std::span<const std::size_t> rows);

/// Greedy max-coverage on the delta-ball graph of labelled ∪ pool; ties go to
/// the lowest index.
std::vector<std::size_t> probcover_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                          std::span<const std::size_t> pool, std::size_t batch, double delta);

enum class Method { random, bald, epig, max_entropy, kcentre, kmeans, typiclust, probcover };

std::string to_string(Method method);
/// Throws ConfigError for unknown names.
Method method_from_string(std::string_view name);
/// Whether the method scores a prob cube (as opposed to selecting by coverage).
bool uses_model(Method method);

/// Appends `step,index,score` rows.
void write_scores_csv(std::ostream& out, std::size_t step, std::span<const std::size_t> pool,
                      std::span<const double> scores);

}  // namespace epiglab
