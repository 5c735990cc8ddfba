#include "epiglab/prob_cube.hpp"

#include <cmath>
#include <string>

#include "epiglab/error.hpp"

namespace epiglab {

Matrix gather(const EmbeddingTable& table, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.d()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= table.n()) throw ShapeError("row " + std::to_string(rows[r]) + " outside embedding table");
    auto src = table.row(rows[r]);
    for (std::size_t j = 0; j < src.size(); ++j) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = src[j];
    }
  }
  return out;
}

std::vector<int> gather(const LabelVector& labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

ProbCube::ProbCube(std::size_t k, std::size_t n, std::size_t c) : k_(k), n_(n), c_(c), values_(k * n * c, 0.0) {}

ProbCube::ProbCube(std::size_t k, std::size_t n, std::size_t c, std::vector<double> values)
    : k_(k), n_(n), c_(c), values_(std::move(values)) {
  if (values_.size() != k * n * c) throw ShapeError("prob cube values do not match k*n*c");
}

void ProbCube::validate(double tol) const {
  for (std::size_t m = 0; m < k_; ++m) {
    for (std::size_t i = 0; i < n_; ++i) {
      double sum = 0.0;
      for (double p : row(m, i)) {
        if (!(p >= 0.0)) {
          throw DataError("prob cube entry negative or NaN at member " + std::to_string(m) + ", input " +
                          std::to_string(i));
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) {
        throw DataError("prob cube row (member " + std::to_string(m) + ", input " + std::to_string(i) +
                        ") sums to " + std::to_string(sum));
      }
    }
  }
}

Matrix marginal_predictive(const ProbCube& cube) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(cube.n()), static_cast<Eigen::Index>(cube.c()));
  for (std::size_t m = 0; m < cube.k(); ++m) {
    for (std::size_t i = 0; i < cube.n(); ++i) {
      auto r = cube.row(m, i);
      for (std::size_t y = 0; y < cube.c(); ++y) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y)) += r[y];
    }
  }
  if (cube.k() > 0) out /= static_cast<double>(cube.k());
  return out;
}

}  // namespace epiglab
