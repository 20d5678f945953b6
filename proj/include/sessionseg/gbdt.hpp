#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sessionseg/common.hpp"

namespace sessionseg {

enum class Growth { kLeafWise, kLevelWise };

struct GbdtConfig {
  double learning_rate = 0.1;
  int num_rounds = 100;
  Growth growth = Growth::kLeafWise;
  int num_leaves = 31;        // leaf-wise budget
  int max_depth = -1;         // level-wise depth; <= 0 means unlimited for leaf-wise
  double feature_fraction = 1.0;  // per tree
  double bagging_fraction = 1.0;  // per round, without replacement
  double l2_lambda = 1.0;
  double min_child_hessian = 1e-3;
  double gamma = 0.0;         // minimum split gain
  int max_bins = 256;
  double pos_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Internal nodes route x[feature] <= threshold to the left child.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (already scaled by the learning rate)
  double cover = 0.0;  // training rows that reached the node

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  int leaf_index(std::span<const double> x) const;
  int depth() const;
  std::size_t leaves() const;
};

struct GbdtModel {
  double base_score = 0.0;  // prior log-odds
  std::vector<Tree> trees;

  double margin(std::span<const double> x) const;
};

struct GbdtTrainingLog {
  // Mean (weighted) logistic loss on the training rows: entry 0 is the prior
  // model, entry r the model after round r.
  std::vector<double> loss;
};

// Per-feature histogram bins. Bin k holds values v with
// upper[k-1] < v <= upper[k]; the last bound is +inf.
struct FeatureBins {
  std::vector<double> upper;
  std::uint16_t bin(double v) const;
};

std::vector<FeatureBins> make_bins(const Matrix& x, int max_bins);

// Second-order boosting of the logistic loss with histogram split search.
// Throws ValidationError on single-class labels or non-finite features.
GbdtModel train_gbdt(const Matrix& x, const Labels& y, const GbdtConfig& cfg,
                     GbdtTrainingLog* log = nullptr);

}  // namespace sessionseg
