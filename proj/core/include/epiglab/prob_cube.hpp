#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "epiglab/data.hpp"

namespace epiglab {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rows of `table` at `rows`, widened to double.
Matrix gather(const EmbeddingTable& table, std::span<const std::size_t> rows);
std::vector<int> gather(const LabelVector& labels, std::span<const std::size_t> rows);

/// Per-member class distributions p(y | x_i, theta_k), laid out member-major:
/// value(k, i, y) lives at ((k * n) + i) * c + y.
class ProbCube {
 public:
  ProbCube() = default;
  ProbCube(std::size_t k, std::size_t n, std::size_t c);
  ProbCube(std::size_t k, std::size_t n, std::size_t c, std::vector<double> values);

  std::size_t k() const { return k_; }
  std::size_t n() const { return n_; }
  std::size_t c() const { return c_; }

  double at(std::size_t member, std::size_t input, std::size_t cls) const {
    return values_[(member * n_ + input) * c_ + cls];
  }
  double& at(std::size_t member, std::size_t input, std::size_t cls) {
    return values_[(member * n_ + input) * c_ + cls];
  }
  std::span<const double> row(std::size_t member, std::size_t input) const {
    return {values_.data() + (member * n_ + input) * c_, c_};
  }
  std::span<double> row(std::size_t member, std::size_t input) {
    return {values_.data() + (member * n_ + input) * c_, c_};
  }
  std::span<const double> values() const { return values_; }

  /// Throws DataError unless every row is non-negative and sums to 1 within tol.
  void validate(double tol = 1e-9) const;

 private:
  std::size_t k_ = 0;
  std::size_t n_ = 0;
  std::size_t c_ = 0;
  std::vector<double> values_;
};

/// Member mean, n x c.
Matrix marginal_predictive(const ProbCube& cube);

}  // namespace epiglab
