#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "epiglab/prob_cube.hpp"

namespace epiglab {

class Rng;

/// CART classification tree on Gini impurity, grown until every leaf is pure
/// or holds fewer than two samples. Leaves store raw class frequencies.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int leaf = -1;  // index into the leaf distribution table
  };

  /// `sample` lists training rows, with repeats for bootstrap draws.
  /// At each split, features are visited in a random order and the search
  /// stops after `max_features` non-constant ones.
  static DecisionTree grow(const Matrix& x, std::span<const int> y, int classes, std::vector<std::size_t> sample,
                           std::size_t max_features, Rng& rng);

  std::span<const double> predict(std::span<const double> row) const;

  int classes() const { return classes_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<double>& leaf_distributions() const { return leaves_; }

  static DecisionTree from_parts(int classes, std::vector<Node> nodes, std::vector<double> leaves);

 private:
  int classes_ = 0;
  std::vector<Node> nodes_;
  std::vector<double> leaves_;
};

struct ForestSettings {
  std::size_t trees = 100;
  std::size_t max_features = 0;  // 0 selects floor(sqrt(d))
  bool bootstrap = true;
};

class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(std::vector<DecisionTree> trees, std::size_t dim) : trees_(std::move(trees)), dim_(dim) {}

  /// Tree t is grown from derive_seed(seed, t), so results do not depend on
  /// the order trees are built in.
  static RandomForest fit(const ForestSettings& settings, const Matrix& x, std::span<const int> y, int classes,
                          std::uint64_t seed);

  /// One cube member per tree.
  ProbCube predict_members(const Matrix& x) const;

  std::size_t size() const { return trees_.size(); }
  std::size_t dim() const { return dim_; }
  const DecisionTree& tree(std::size_t t) const { return trees_[t]; }

 private:
  std::vector<DecisionTree> trees_;
  std::size_t dim_ = 0;
};

}  // namespace epiglab
