#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sessionseg/common.hpp"
#include "sessionseg/models.hpp"

namespace sessionseg {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Predictions are score >= threshold.
Confusion confusion(std::span<const int> y, std::span<const double> scores,
                    double threshold);

// F1 = 2PR / (P + R), defined as 0 when P + R = 0. Throws on empty input.
double f1_score(std::span<const int> y, std::span<const double> scores,
                double threshold = 0.5);

// Probability that a random positive outscores a random negative, ties
// counting one half (average-rank Mann-Whitney statistic). Throws unless both
// classes are present.
double roc_auc(std::span<const int> y, std::span<const double> scores);

// Average precision: sum over distinct score thresholds (descending) of
// (recall step) * precision. Throws when there are no positives.
double pr_auc(std::span<const int> y, std::span<const double> scores);

struct MetricReport {
  double f1 = 0;
  double pr_auc = 0;
  double roc_auc = 0;
  double threshold = 0.5;
  Confusion counts;

  nlohmann::ordered_json to_json() const;
};

MetricReport evaluate_scores(std::span<const int> y, std::span<const double> scores,
                             double threshold = 0.5);
MetricReport evaluate(const TrainedModel& model, const Matrix& x, const Labels& y,
                      double threshold = 0.5);

// Session-grouped folds: every row of a group lands in the same fold.
struct FoldPlan {
  int k = 0;
  std::vector<int> fold_of_row;

  std::vector<std::size_t> train_rows(int fold) const;
  std::vector<std::size_t> valid_rows(int fold) const;
};

// Distinct groups are shuffled by the seed, ordered by size (largest first,
// stable) and each is dealt to the fold currently holding the fewest rows.
// Throws when k < 2 or there are fewer than k groups.
FoldPlan group_kfold(std::span<const std::string> groups, int k, std::uint64_t seed);

enum class Scale { kLogUniform, kUniform, kUniformInt };

struct ParamRange {
  std::string name;
  Scale scale = Scale::kUniform;
  double lo = 0;
  double hi = 1;
};

struct SearchSpace {
  std::vector<ParamRange> params;
  void validate() const;
};

using ParamSet = std::vector<std::pair<std::string, double>>;
double param(const ParamSet& set, std::string_view name, double fallback);

ParamSet sample_params(const SearchSpace& space, Rng& rng);

// Candidate ranges for each classifier family.
SearchSpace leafwise_gbdt_space();   // learning_rate, feature_fraction, lambda_l2,
                                     // num_leaves, min_sum_hessian_in_leaf,
                                     // bagging_fraction
SearchSpace levelwise_gbdt_space();  // learning_rate, colsample_bytree, gamma,
                                     // lambda, max_depth, min_child_weight, subsample
SearchSpace svm_space();             // C, gamma
SearchSpace logreg_space();          // C

// Fits on the training rows and returns probabilities for the validation rows.
using Trainer = std::function<std::vector<double>(
    const ParamSet& params, const Matrix& x_train, const Labels& y_train,
    const Matrix& x_valid)>;

struct TrialRecord {
  std::size_t index = 0;
  ParamSet params;
  std::vector<double> fold_f1;
  double mean_f1 = 0;
  bool failed = false;
  std::string error;

  nlohmann::ordered_json to_json() const;
};

struct SearchResult {
  std::size_t best_trial = 0;
  ParamSet best_params;
  double best_score = 0;
  std::vector<TrialRecord> trials;
};

// Objective: mean validation F1 at `threshold` over the folds. A trial whose
// trainer throws is recorded as failed. Throws when every trial fails. When
// `trial_log` is given each record is appended as one JSON line.
SearchResult random_search(const SearchSpace& space, int trials,
                           const FoldPlan& folds, const Matrix& x,
                           const Labels& y, const Trainer& trainer,
                           std::uint64_t seed, double threshold = 0.5,
                           std::ostream* trial_log = nullptr);

}  // namespace sessionseg
