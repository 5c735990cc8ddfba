#include "epiglab/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "epiglab/error.hpp"
#include "epiglab/rng.hpp"

namespace epiglab {

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = -1.0;  // sum over children of (sum_c count_c^2) / n_child; larger is purer
};

struct Pending {
  int node;
  std::size_t begin;
  std::size_t end;
};

}  // namespace

DecisionTree DecisionTree::grow(const Matrix& x, std::span<const int> y, int classes, std::vector<std::size_t> sample,
                                std::size_t max_features, Rng& rng) {
  const auto d = static_cast<std::size_t>(x.cols());
  if (sample.empty()) throw StateError("cannot grow a tree on an empty sample");
  max_features = std::clamp<std::size_t>(max_features, 1, d);
  const auto C = static_cast<std::size_t>(classes);

  DecisionTree tree;
  tree.classes_ = classes;
  tree.nodes_.emplace_back();

  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), std::size_t{0});
  std::vector<std::pair<double, int>> column;
  std::vector<double> total(C), left(C);

  std::vector<Pending> stack{{0, 0, sample.size()}};
  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    const std::size_t m = job.end - job.begin;

    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t s = job.begin; s < job.end; ++s) total[static_cast<std::size_t>(y[sample[s]])] += 1.0;
    const bool pure = std::count_if(total.begin(), total.end(), [](double v) { return v > 0.0; }) <= 1;

    Split best;
    if (!pure && m >= 2) {
      rng.shuffle(features);
      std::size_t visited = 0;
      for (std::size_t fi = 0; fi < d && visited < max_features; ++fi) {
        const std::size_t f = features[fi];
        column.clear();
        for (std::size_t s = job.begin; s < job.end; ++s) {
          column.emplace_back(x(static_cast<Eigen::Index>(sample[s]), static_cast<Eigen::Index>(f)),
                              y[sample[s]]);
        }
        std::sort(column.begin(), column.end());
        if (column.front().first == column.back().first) continue;  // constant: not counted
        ++visited;

        std::fill(left.begin(), left.end(), 0.0);
        double left_sq = 0.0;
        double right_sq = 0.0;
        for (double t : total) right_sq += t * t;
        for (std::size_t p = 0; p + 1 < m; ++p) {
          const auto c = static_cast<std::size_t>(column[p].second);
          // Update sum of squares incrementally as one sample moves left.
          const double r = total[c] - left[c];
          left_sq += 2.0 * left[c] + 1.0;
          right_sq -= 2.0 * r - 1.0;
          left[c] += 1.0;
          if (column[p].first == column[p + 1].first) continue;
          const double nl = static_cast<double>(p + 1);
          const double nr = static_cast<double>(m - p - 1);
          const double score = left_sq / nl + right_sq / nr;
          if (score > best.score) {
            best.score = score;
            best.feature = static_cast<int>(f);
            double mid = 0.5 * (column[p].first + column[p + 1].first);
            // Guard against the midpoint rounding onto the upper value.
            best.threshold = mid < column[p + 1].first ? mid : column[p].first;
          }
        }
      }
    }

    if (best.feature < 0) {
      Node& leaf = tree.nodes_[static_cast<std::size_t>(job.node)];
      leaf.leaf = static_cast<int>(tree.leaves_.size() / C);
      for (double t : total) tree.leaves_.push_back(t / static_cast<double>(m));
      continue;
    }

    auto mid = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(job.begin),
                              sample.begin() + static_cast<std::ptrdiff_t>(job.end), [&](std::size_t row) {
                                return x(static_cast<Eigen::Index>(row), best.feature) <= best.threshold;
                              });
    const std::size_t split_at = static_cast<std::size_t>(mid - sample.begin());
    const int left_id = static_cast<int>(tree.nodes_.size());
    tree.nodes_.emplace_back();
    const int right_id = static_cast<int>(tree.nodes_.size());
    tree.nodes_.emplace_back();
    Node& node = tree.nodes_[static_cast<std::size_t>(job.node)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left_id;
    node.right = right_id;
    stack.push_back({right_id, split_at, job.end});
    stack.push_back({left_id, job.begin, split_at});
  }
  return tree;
}

std::span<const double> DecisionTree::predict(std::span<const double> row) const {
  std::size_t id = 0;
  while (nodes_[id].feature >= 0) {
    const Node& node = nodes_[id];
    id = static_cast<std::size_t>(row[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                                 : node.right);
  }
  const auto C = static_cast<std::size_t>(classes_);
  return {leaves_.data() + static_cast<std::size_t>(nodes_[id].leaf) * C, C};
}

DecisionTree DecisionTree::from_parts(int classes, std::vector<Node> nodes, std::vector<double> leaves) {
  DecisionTree tree;
  tree.classes_ = classes;
  tree.nodes_ = std::move(nodes);
  tree.leaves_ = std::move(leaves);
  const std::size_t leaf_count = classes > 0 ? tree.leaves_.size() / static_cast<std::size_t>(classes) : 0;
  for (const Node& n : tree.nodes_) {
    const bool ok = n.feature >= 0 ? (n.left > 0 && n.right > 0 && static_cast<std::size_t>(n.left) < tree.nodes_.size() &&
                                      static_cast<std::size_t>(n.right) < tree.nodes_.size())
                                   : (n.leaf >= 0 && static_cast<std::size_t>(n.leaf) < leaf_count);
    if (!ok) throw FormatError("corrupt tree node");
  }
  return tree;
}

RandomForest RandomForest::fit(const ForestSettings& settings, const Matrix& x, std::span<const int> y, int classes,
                               std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (n == 0) throw StateError("cannot fit a forest on an empty training set");
  const std::size_t max_features =
      settings.max_features > 0 ? settings.max_features
                                : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(double(d)))));
  std::vector<DecisionTree> trees;
  trees.reserve(settings.trees);
  for (std::size_t t = 0; t < settings.trees; ++t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> sample(n);
    if (settings.bootstrap) {
      for (auto& s : sample) s = rng.uniform_index(n);
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    trees.push_back(DecisionTree::grow(x, y, classes, std::move(sample), max_features, rng));
  }
  return RandomForest(std::move(trees), d);
}

ProbCube RandomForest::predict_members(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != dim_) {
    throw ShapeError("forest expects " + std::to_string(dim_) + " features, got " + std::to_string(x.cols()));
  }
  const auto n = static_cast<std::size_t>(x.rows());
  const auto C = static_cast<std::size_t>(trees_.empty() ? 0 : trees_.front().classes());
  ProbCube cube(trees_.size(), n, C);
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      auto dist = trees_[t].predict({x.row(static_cast<Eigen::Index>(i)).data(), dim_});
      std::copy(dist.begin(), dist.end(), cube.row(t, i).begin());
    }
  }
  return cube;
}

}  // namespace epiglab
