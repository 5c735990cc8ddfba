#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "epiglab/prob_cube.hpp"

namespace epiglab {

struct KMeansResult {
  Matrix centroids;
  std::vector<std::size_t> assignment;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm from a seeded k-means++ start. Stops after `max_iter`
/// iterations or once no centroid moves more than `tol`. Empty clusters keep
/// their previous centroid; assignment ties go to the lower centroid index.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100,
                    double tol = 1e-6);

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j);

}  // namespace epiglab
