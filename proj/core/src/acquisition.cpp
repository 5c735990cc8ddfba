#include "epiglab/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "epiglab/clustering.hpp"
#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {

constexpr std::size_t kEpigChunk = 64;

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

void check_batch(std::size_t batch, std::size_t pool_size, const char* who) {
  if (batch > pool_size) {
    throw ConfigError(std::string(who) + ": batch " + std::to_string(batch) + " exceeds pool size " +
                      std::to_string(pool_size));
  }
}

double row_distance(const EmbeddingTable& t, std::size_t a, std::size_t b) {
  auto ra = t.row(a);
  auto rb = t.row(b);
  double s = 0.0;
  for (std::size_t j = 0; j < ra.size(); ++j) {
    double d = static_cast<double>(ra[j]) - static_cast<double>(rb[j]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < -1e-12) throw DomainError("entropy: negative probability " + std::to_string(p[i]) + " at " + std::to_string(i));
    if (p[i] > 0.0) h -= p[i] * clamped_log(p[i]);
  }
  return h;
}

ScoreVector max_entropy_scores(const ProbCube& cube) {
  const Matrix marginal = marginal_predictive(cube);
  ScoreVector out(cube.n());
  for (std::size_t i = 0; i < cube.n(); ++i) {
    out[i] = entropy({marginal.row(static_cast<Eigen::Index>(i)).data(), cube.c()});
  }
  return out;
}

ScoreVector bald_scores(const ProbCube& cube) {
  const Matrix marginal = marginal_predictive(cube);
  ScoreVector out(cube.n());
  for (std::size_t i = 0; i < cube.n(); ++i) {
    double member_entropy = 0.0;
    for (std::size_t m = 0; m < cube.k(); ++m) member_entropy += entropy(cube.row(m, i));
    member_entropy /= static_cast<double>(std::max<std::size_t>(cube.k(), 1));
    out[i] = entropy({marginal.row(static_cast<Eigen::Index>(i)).data(), cube.c()}) - member_entropy;
  }
  return out;
}

ScoreVector epig_scores(const ProbCube& pool, const ProbCube& target) {
  if (pool.k() != target.k()) {
    throw ShapeError("epig: pool has " + std::to_string(pool.k()) + " members, target has " +
                     std::to_string(target.k()));
  }
  if (pool.c() != target.c()) throw ShapeError("epig: pool and target class counts differ");
  const std::size_t K = pool.k();
  const std::size_t C = pool.c();
  const std::size_t N = pool.n();
  const std::size_t M = target.n();
  ScoreVector out(N, 0.0);
  if (M == 0 || K == 0) return out;

  // targets laid out as K x (M*C)
  Matrix b(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M * C));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < M; ++j) {
      auto r = target.row(k, j);
      for (std::size_t y = 0; y < C; ++y) b(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j * C + y)) = r[y];
    }
  }

  Matrix a;
  Matrix joint;
  std::vector<double> log_row(C), log_col(C);
  for (std::size_t start = 0; start < N; start += kEpigChunk) {
    const std::size_t rows = std::min(kEpigChunk, N - start);
    a.resize(static_cast<Eigen::Index>(rows * C), static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < rows; ++i) {
        auto r = pool.row(k, start + i);
        for (std::size_t y = 0; y < C; ++y) a(static_cast<Eigen::Index>(i * C + y), static_cast<Eigen::Index>(k)) = r[y];
      }
    }
    joint.noalias() = a * b;
    joint /= static_cast<double>(K);

    for (std::size_t i = 0; i < rows; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < M; ++j) {
        auto block = joint.block(static_cast<Eigen::Index>(i * C), static_cast<Eigen::Index>(j * C),
                                 static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
        for (std::size_t y = 0; y < C; ++y) {
          log_row[y] = clamped_log(block.row(static_cast<Eigen::Index>(y)).sum());
          log_col[y] = clamped_log(block.col(static_cast<Eigen::Index>(y)).sum());
        }
        double mi = 0.0;
        for (std::size_t y = 0; y < C; ++y) {
          for (std::size_t ys = 0; ys < C; ++ys) {
            const double p = block(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(ys));
            if (p > 0.0) mi += p * (clamped_log(p) - log_row[y] - log_col[ys]);
          }
        }
        total += mi;
      }
      out[start + i] = total / static_cast<double>(M);
    }
  }
  return out;
}

std::vector<std::size_t> random_select(std::span<const std::size_t> pool, std::size_t batch, std::uint64_t seed) {
  check_batch(batch, pool.size(), "random_select");
  Rng rng(seed);
  return rng.sample(pool, batch);
}

std::vector<std::size_t> select_top(std::span<const double> scores, std::span<const std::size_t> pool,
                                    std::size_t batch, std::uint64_t seed) {
  if (scores.size() != pool.size()) throw ShapeError("select_top: score count does not match pool size");
  check_batch(batch, pool.size(), "select_top");
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (std::isnan(scores[p])) throw ScoringError("NaN acquisition score for pool index " + std::to_string(pool[p]));
  }
  // A seeded permutation followed by a stable sort leaves tied scores in a
  // uniformly random order.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < batch; ++r) out.push_back(pool[order[r]]);
  return out;
}

std::vector<std::size_t> kcentre_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                        std::span<const std::size_t> pool, std::size_t batch) {
  if (pool.empty()) throw ConfigError("kcentre_select: empty pool");
  check_batch(batch, pool.size(), "kcentre_select");
  std::vector<double> min_dist(pool.size(), std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < pool.size(); ++p) {
    for (std::size_t l : labelled) min_dist[p] = std::min(min_dist[p], row_distance(embeddings, pool[p], l));
  }
  std::vector<bool> taken(pool.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best = pool.size();
    double best_value = -1.0;
    for (std::size_t p = 0; p < pool.size(); ++p) {
      if (taken[p]) continue;
      double value = min_dist[p];
      if (std::isinf(value)) {
        // Nothing labelled or picked yet: distance to the origin.
        value = 0.0;
        for (float v : embeddings.row(pool[p])) value += static_cast<double>(v) * v;
        value = std::sqrt(value);
      }
      if (value > best_value) {
        best_value = value;
        best = p;
      }
    }
    taken[best] = true;
    out.push_back(pool[best]);
    for (std::size_t p = 0; p < pool.size(); ++p) {
      min_dist[p] = std::min(min_dist[p], row_distance(embeddings, pool[p], pool[best]));
    }
  }
  return out;
}

std::vector<std::size_t> kmeans_select(const EmbeddingTable& embeddings, std::span<const std::size_t> pool,
                                       std::size_t batch, std::uint64_t seed) {
  check_batch(batch, pool.size(), "kmeans_select");
  if (batch == 0) return {};
  const Matrix points = gather(embeddings, pool);
  const KMeansResult km = kmeans(points, batch, seed);
  std::vector<bool> taken(pool.size(), false);
  std::vector<std::size_t> out;
  std::vector<std::pair<double, std::size_t>> by_distance(pool.size());
  for (Eigen::Index c = 0; c < km.centroids.rows(); ++c) {
    for (std::size_t p = 0; p < pool.size(); ++p) {
      by_distance[p] = {squared_distance(points, static_cast<Eigen::Index>(p), km.centroids, c), p};
    }
    std::sort(by_distance.begin(), by_distance.end());
    for (const auto& [dist, p] : by_distance) {
      if (taken[p]) continue;
      taken[p] = true;
      out.push_back(pool[p]);
      break;
    }
  }
  return out;
}

std::vector<std::size_t> typiclust_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                          std::span<const std::size_t> pool, std::size_t batch, std::uint64_t seed) {
  check_batch(batch, pool.size(), "typiclust_select");
  if (batch == 0) return {};
  std::vector<std::size_t> rows(labelled.begin(), labelled.end());
  rows.insert(rows.end(), pool.begin(), pool.end());
  const Matrix points = gather(embeddings, rows);
  const std::size_t k = std::min(labelled.size() + batch, rows.size());
  const KMeansResult km = kmeans(points, k, seed);

  std::vector<std::vector<std::size_t>> members(k);  // positions into rows
  std::vector<bool> covered(k, false);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    members[km.assignment[r]].push_back(r);
    if (r < labelled.size()) covered[km.assignment[r]] = true;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return members[a].size() > members[b].size(); });
  // Uncovered clusters first, then covered ones as a fallback when there are
  // fewer non-empty uncovered clusters than the batch.
  std::stable_partition(order.begin(), order.end(), [&](std::size_t c) { return !covered[c]; });

  std::vector<bool> picked(rows.size(), false);
  std::vector<std::size_t> out;
  std::vector<double> dists;
  while (out.size() < batch) {
    bool progress = false;
    for (std::size_t c : order) {
      if (out.size() == batch) break;
      const auto& cluster = members[c];
      std::size_t best = rows.size();
      double best_typicality = -1.0;
      for (std::size_t r : cluster) {
        if (r < labelled.size() || picked[r]) continue;
        dists.clear();
        for (std::size_t o : cluster) {
          if (o != r) dists.push_back(std::sqrt(squared_distance(points, static_cast<Eigen::Index>(r), points,
                                                                 static_cast<Eigen::Index>(o))));
        }
        const std::size_t nn = std::min(kTypicalityNeighbours, dists.size());
        std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(nn), dists.end());
        double typicality = 0.0;
        if (nn > 0) {
          const double mean = std::accumulate(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(nn), 0.0) /
                              static_cast<double>(nn);
          typicality = mean > 0.0 ? 1.0 / mean : std::numeric_limits<double>::infinity();
        }
        if (typicality > best_typicality || (typicality == best_typicality && rows[r] < rows[best])) {
          best_typicality = typicality;
          best = r;
        }
      }
      if (best == rows.size()) continue;
      picked[best] = true;
      out.push_back(rows[best]);
      progress = true;
    }
    if (!progress) break;
  }
  return out;
}

std::vector<double> probcover_purity(const Matrix& points, std::span<const std::size_t> pseudo_labels,
                                     std::span<const double> grid) {
  const auto n = static_cast<std::size_t>(points.rows());
  // Distance from each point to its nearest differently-labelled point.
  std::vector<double> conflict(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (pseudo_labels[i] == pseudo_labels[j]) continue;
      // Sequential sum, as in row_distance: a grid radius that equals a pairwise
      // distance must compare equal to it (closed ball).
      double s = 0.0;
      for (Eigen::Index f = 0; f < points.cols(); ++f) {
        const double diff = points(static_cast<Eigen::Index>(i), f) - points(static_cast<Eigen::Index>(j), f);
        s += diff * diff;
      }
      const double d = std::sqrt(s);
      conflict[i] = std::min(conflict[i], d);
      conflict[j] = std::min(conflict[j], d);
    }
  }
  std::vector<double> purity;
  for (double delta : grid) {
    std::size_t pure = 0;
    for (double c : conflict) pure += c > delta ? 1 : 0;
    purity.push_back(n == 0 ? 1.0 : static_cast<double>(pure) / static_cast<double>(n));
  }
  return purity;
}

ProbCoverTuning probcover_tune_radius(const EmbeddingTable& embeddings, std::span<const std::size_t> rows,
                                      int num_classes, const ProbCoverConfig& config) {
  std::vector<double> grid = config.grid.empty() ? default_radius_grid(embeddings, rows) : config.grid;
  if (grid.empty()) throw ConfigError("probcover: empty radius grid");
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g] < 0.0 || (g > 0 && grid[g] <= grid[g - 1])) {
      throw ConfigError("probcover: radius grid must be non-negative and strictly increasing");
    }
  }
  if (!(config.purity_target > 0.0 && config.purity_target <= 1.0)) {
    throw ConfigError("probcover: purity target must be in (0, 1]");
  }
  const Matrix points = gather(embeddings, rows);
  const KMeansResult km = kmeans(points, static_cast<std::size_t>(num_classes), config.seed);
  const std::vector<double> purity = probcover_purity(points, km.assignment, grid);

  ProbCoverTuning out;
  double best_purity = 0.0;
  bool found = false;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out.curve.emplace_back(grid[g], purity[g]);
    best_purity = std::max(best_purity, purity[g]);
    if (purity[g] >= config.purity_target) {
      out.radius = grid[g];
      found = true;
    }
  }
  if (!found) {
    throw TuningError("probcover: no radius reaches purity " + std::to_string(config.purity_target) +
                      " (best " + std::to_string(best_purity) + ")");
  }
  return out;
}

std::vector<double> default_radius_grid(const EmbeddingTable& embeddings, std::span<const std::size_t> rows) {
  std::vector<double> distances;
  // Deterministic subsample of pairs keeps this cheap on large pools.
  const std::size_t stride = std::max<std::size_t>(1, rows.size() / 200);
  for (std::size_t a = 0; a < rows.size(); a += stride) {
    for (std::size_t b = a + stride; b < rows.size(); b += stride) {
      distances.push_back(row_distance(embeddings, rows[a], rows[b]));
    }
  }
  if (distances.empty()) return {1.0};
  auto mid = distances.begin() + static_cast<std::ptrdiff_t>(distances.size() / 2);
  std::nth_element(distances.begin(), mid, distances.end());
  const double median = *mid > 0.0 ? *mid : 1.0;
  std::vector<double> grid;
  for (int i = 1; i <= 30; ++i) grid.push_back(median * (i / 30.0));  // last point is exactly the median
  return grid;
}

std::vector<std::size_t> probcover_select(const EmbeddingTable& embeddings, std::span<const std::size_t> labelled,
                                          std::span<const std::size_t> pool, std::size_t batch, double delta) {
  if (!(delta > 0.0)) throw ConfigError("probcover_select: radius must be positive");
  check_batch(batch, pool.size(), "probcover_select");
  std::vector<std::size_t> points(labelled.begin(), labelled.end());
  points.insert(points.end(), pool.begin(), pool.end());
  const std::size_t n = points.size();

  std::vector<std::vector<std::size_t>> covers(n);  // out-neighbours (positions), self included
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (row_distance(embeddings, points[u], points[v]) <= delta) covers[u].push_back(v);
    }
  }
  std::vector<bool> covered(n, false);
  for (std::size_t u = 0; u < labelled.size(); ++u) {
    for (std::size_t v : covers[u]) covered[v] = true;
  }
  std::vector<bool> picked(n, false);
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t best = n;
    std::size_t best_degree = 0;
    for (std::size_t u = labelled.size(); u < n; ++u) {
      if (picked[u]) continue;
      std::size_t degree = 0;
      for (std::size_t v : covers[u]) degree += covered[v] ? 0 : 1;
      if (best == n || degree > best_degree || (degree == best_degree && points[u] < points[best])) {
        best = u;
        best_degree = degree;
      }
    }
    picked[best] = true;
    for (std::size_t v : covers[best]) covered[v] = true;
    out.push_back(points[best]);
  }
  return out;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::random: return "random";
    case Method::bald: return "bald";
    case Method::epig: return "epig";
    case Method::max_entropy: return "max_entropy";
    case Method::kcentre: return "kcentre";
    case Method::kmeans: return "kmeans";
    case Method::typiclust: return "typiclust";
    case Method::probcover: return "probcover";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  static const std::pair<std::string_view, Method> names[] = {
      {"random", Method::random},       {"bald", Method::bald},           {"epig", Method::epig},
      {"max_entropy", Method::max_entropy}, {"entropy", Method::max_entropy}, {"kcentre", Method::kcentre},
      {"kcenter", Method::kcentre},     {"kmeans", Method::kmeans},       {"typiclust", Method::typiclust},
      {"probcover", Method::probcover},
  };
  for (const auto& [key, method] : names) {
    if (key == name) return method;
  }
  throw ConfigError("unknown acquisition method '" + std::string(name) + "'");
}

bool uses_model(Method method) {
  return method == Method::bald || method == Method::epig || method == Method::max_entropy;
}

void write_scores_csv(std::ostream& out, std::size_t step, std::span<const std::size_t> pool,
                      std::span<const double> scores) {
  char buf[96];
  for (std::size_t p = 0; p < pool.size(); ++p) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g\n", step, pool[p], scores[p]);
    out << buf;
  }
}

}  // namespace epiglab
