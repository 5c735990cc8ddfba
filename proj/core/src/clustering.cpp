#include "epiglab/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter, double tol) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0 || k > n) {
    throw ConfigError("kmeans: k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  }
  Rng rng(seed);
  KMeansResult result;
  result.centroids.resize(static_cast<Eigen::Index>(k), points.cols());

  // k-means++ seeding
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_index(n);
  result.centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points, static_cast<Eigen::Index>(i), result.centroids,
                                                         static_cast<Eigen::Index>(c - 1)));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        if (u < nearest[i]) {
          pick = i;
          break;
        }
        u -= nearest[i];
      }
      // Floating point leftovers may land on an already-chosen point.
      while (nearest[pick] <= 0.0 && pick > 0) --pick;
    } else {
      pick = rng.uniform_index(n);
    }
    result.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
  }

  result.assignment.assign(n, 0);
  Matrix sums(static_cast<Eigen::Index>(k), points.cols());
  std::vector<std::size_t> counts(k);
  for (result.iterations = 0; result.iterations < max_iter;) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double d = squared_distance(points, static_cast<Eigen::Index>(i), result.centroids, static_cast<Eigen::Index>(c));
        if (d < best) {
          best = d;
          result.assignment[i] = c;
        }
      }
    }
    ++result.iterations;
    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(result.assignment[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[result.assignment[i]];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      Eigen::RowVectorXd updated = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      shift = std::max(shift, (updated - result.centroids.row(static_cast<Eigen::Index>(c))).norm());
      result.centroids.row(static_cast<Eigen::Index>(c)) = updated;
    }
    if (shift < tol) break;
  }
  // Final assignment against the final centroids.
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double d = squared_distance(points, static_cast<Eigen::Index>(i), result.centroids, static_cast<Eigen::Index>(c));
      if (d < best) {
        best = d;
        result.assignment[i] = c;
      }
    }
  }
  return result;
}

}  // namespace epiglab
