#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "torml/random.hpp"
#include "torml/serialize.hpp"

namespace torml {

/// Bagged CART with Gini impurity. Used as the base learner for the
/// multi-label strategies, both binary and multiclass.
struct ForestParams {
  int n_trees = 100;
  int features_per_split = 0;  // 0 = ceil(sqrt(F))
  int max_depth = 0;           // 0 = unlimited
  int min_samples_leaf = 1;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;      // -1 marks a leaf
  double threshold = 0;  // go left when value <= threshold
  int left = -1;
  int right = -1;
  std::vector<double> probs;  // leaf class distribution, sums to 1
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const std::vector<double>& predict(std::span<const double> x) const {
    int cur = 0;
    while (nodes[cur].feature >= 0)
      cur = x[nodes[cur].feature] <= nodes[cur].threshold ? nodes[cur].left
                                                          : nodes[cur].right;
    return nodes[cur].probs;
  }
};

class RandomForest {
 public:
  RandomForest() = default;

  int n_classes() const { return n_classes_; }
  int n_features() const { return n_features_; }
  bool constant() const { return constant_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }

  /// Mean of the trees' leaf distributions.
  std::vector<double> predict_proba(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != n_features_)
      throw std::invalid_argument("feature vector width mismatch");
    std::vector<double> acc(n_classes_, 0.0);
    for (const auto& tree : trees_) {
      const auto& p = tree.predict(x);
      for (int c = 0; c < n_classes_; ++c) acc[c] += p[c];
    }
    for (double& v : acc) v /= double(trees_.size());
    return acc;
  }

  int predict_class(std::span<const double> x) const {
    auto p = predict_proba(x);
    return int(std::max_element(p.begin(), p.end()) - p.begin());
  }

  void serialize(io::ByteWriter& w) const {
    w.u32(std::uint32_t(n_classes_));
    w.u32(std::uint32_t(n_features_));
    w.u8(constant_ ? 1 : 0);
    w.u32(std::uint32_t(trees_.size()));
    for (const auto& t : trees_) {
      w.u32(std::uint32_t(t.nodes.size()));
      for (const auto& n : t.nodes) {
        w.i32(n.feature);
        w.f64(n.threshold);
        w.i32(n.left);
        w.i32(n.right);
        if (n.feature < 0) w.f64_vec(n.probs);
      }
    }
  }

  static RandomForest deserialize(io::ByteReader& r) {
    RandomForest f;
    f.n_classes_ = int(r.u32());
    f.n_features_ = int(r.u32());
    f.constant_ = r.u8() != 0;
    const std::uint32_t nt = r.u32();
    f.trees_.resize(nt);
    for (auto& t : f.trees_) {
      t.nodes.resize(r.u32());
      for (auto& n : t.nodes) {
        n.feature = r.i32();
        n.threshold = r.f64();
        n.left = r.i32();
        n.right = r.i32();
        if (n.feature < 0) n.probs = r.f64_vec();
      }
    }
    return f;
  }

  friend RandomForest fit_forest(const std::vector<std::vector<double>>&,
                                 const std::vector<int>&, int,
                                 const ForestParams&);

 private:
  std::vector<DecisionTree> trees_;
  ForestParams params_;
  int n_classes_ = 0;
  int n_features_ = 0;
  bool constant_ = false;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x,
              const std::vector<int>& y, int n_classes,
              const ForestParams& params, Rng& rng)
      : x_(x), y_(y), n_classes_(n_classes), params_(params), rng_(rng) {}

  DecisionTree build(std::vector<int> sample_indices) {
    tree_.nodes.clear();
    grow(std::move(sample_indices), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<int> idx, int depth) {
    const int node_id = int(tree_.nodes.size());
    tree_.nodes.emplace_back();

    std::vector<int> counts(n_classes_, 0);
    for (int i : idx) ++counts[y_[i]];
    const bool pure =
        *std::max_element(counts.begin(), counts.end()) == int(idx.size());
    const bool depth_stop = params_.max_depth > 0 && depth >= params_.max_depth;

    int best_feature = -1;
    double best_threshold = 0, best_gini = std::numeric_limits<double>::max();
    if (!pure && !depth_stop &&
        int(idx.size()) >= 2 * params_.min_samples_leaf) {
      const int nf = int(x_[0].size());
      const int k = params_.features_per_split > 0
                        ? std::min(params_.features_per_split, nf)
                        : int(std::ceil(std::sqrt(double(nf))));
      for (int f : rng_.sample_without_replacement(nf, k))
        try_feature(idx, f, best_feature, best_threshold, best_gini);
    }

    if (best_feature < 0) {
      auto& leaf = tree_.nodes[node_id];
      leaf.probs.assign(n_classes_, 0.0);
      for (int c = 0; c < n_classes_; ++c)
        leaf.probs[c] = double(counts[c]) / double(idx.size());
      return node_id;
    }

    std::vector<int> left_idx, right_idx;
    for (int i : idx)
      (x_[i][best_feature] <= best_threshold ? left_idx : right_idx)
          .push_back(i);
    tree_.nodes[node_id].feature = best_feature;
    tree_.nodes[node_id].threshold = best_threshold;
    const int left = grow(std::move(left_idx), depth + 1);
    tree_.nodes[node_id].left = left;
    const int right = grow(std::move(right_idx), depth + 1);
    tree_.nodes[node_id].right = right;
    return node_id;
  }

  void try_feature(const std::vector<int>& idx, int f, int& best_feature,
                   double& best_threshold, double& best_gini) {
    scratch_.clear();
    for (int i : idx) scratch_.push_back({x_[i][f], y_[i]});
    std::sort(scratch_.begin(), scratch_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const int n = int(scratch_.size());
    std::vector<int> right_counts(n_classes_, 0), left_counts(n_classes_, 0);
    for (const auto& [v, c] : scratch_) ++right_counts[c];
    double left_sq = 0;
    double right_sq = 0;
    for (int c : right_counts) right_sq += double(c) * double(c);

    for (int i = 0; i < n - 1; ++i) {
      const int c = scratch_[i].second;
      left_sq += 2.0 * left_counts[c] + 1.0;
      right_sq += -2.0 * right_counts[c] + 1.0;
      ++left_counts[c];
      --right_counts[c];
      if (scratch_[i].first == scratch_[i + 1].first) continue;
      const int nl = i + 1, nr = n - nl;
      if (nl < params_.min_samples_leaf || nr < params_.min_samples_leaf)
        continue;
      // Weighted Gini: sum over children of n_child * (1 - sum p^2).
      const double gini =
          (nl - left_sq / nl) + (nr - right_sq / nr);
      if (gini < best_gini - 1e-12) {
        best_gini = gini;
        best_feature = f;
        best_threshold =
            scratch_[i].first + (scratch_[i + 1].first - scratch_[i].first) / 2;
        if (best_threshold == scratch_[i + 1].first)
          best_threshold = scratch_[i].first;  // midpoint rounded up
      }
    }
  }

  const std::vector<std::vector<double>>& x_;
  const std::vector<int>& y_;
  int n_classes_;
  const ForestParams& params_;
  Rng& rng_;
  DecisionTree tree_;
  std::vector<std::pair<double, int>> scratch_;
};

}  // namespace detail

/// Fits a bagged forest on (x, y) with class ids in [0, n_classes).
/// Each tree draws a bootstrap sample and its own substream from
/// (seed, tree index), so fits are reproducible tree by tree.
/// Single-class input yields a constant-leaf forest, flagged.
inline RandomForest fit_forest(const std::vector<std::vector<double>>& x,
                               const std::vector<int>& y, int n_classes,
                               const ForestParams& params) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("bad training matrix");
  if (x.size() < 2) throw std::invalid_argument("need at least 2 samples");
  if (n_classes < 1) throw std::invalid_argument("need at least 1 class");
  if (params.n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");

  RandomForest forest;
  forest.params_ = params;
  forest.n_classes_ = n_classes;
  forest.n_features_ = int(x[0].size());

  std::vector<int> seen(n_classes, 0);
  for (int c : y) {
    if (c < 0 || c >= n_classes)
      throw std::invalid_argument("class id out of range");
    seen[c] = 1;
  }
  forest.constant_ =
      std::accumulate(seen.begin(), seen.end(), 0) < 2;

  const int n = int(x.size());
  forest.trees_.reserve(params.n_trees);
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng(derive_seed(params.seed, 0xF0, std::uint64_t(t)));
    std::vector<int> bootstrap(n);
    for (int i = 0; i < n; ++i) bootstrap[i] = int(rng.below(std::uint64_t(n)));
    detail::TreeBuilder builder(x, y, n_classes, params, rng);
    forest.trees_.push_back(builder.build(std::move(bootstrap)));
  }
  return forest;
}

}  // namespace torml
