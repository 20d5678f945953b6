#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sessionseg/common.hpp"
#include "sessionseg/models.hpp"

namespace sessionseg {

// Additive explanation of one prediction's margin (log-odds):
// sum(values) + base_value == margin for the exact methods.
struct Attribution {
  std::vector<double> values;
  double base_value = 0;
  double margin = 0;
  bool approximate = false;
};

enum class ShapMode {
  // Features outside a coalition take their values from each background row;
  // base_value is the mean margin over the background.
  kInterventional,
  // Conditional expectations follow the training covers stored in the trees;
  // base_value is the cover-weighted expected margin.
  kPathDependent,
};

// Exact Shapley values for a boosted tree ensemble. Throws ValidationError for
// non-GBDT models (use linear_shap) or, in interventional mode, an empty
// background.
Attribution tree_shap(const TrainedModel& model, std::span<const double> x,
                      const Matrix& background,
                      ShapMode mode = ShapMode::kInterventional);

Attribution tree_shap(const GbdtModel& model, std::span<const double> x,
                      const Matrix& background, ShapMode mode);

// Logistic regression: w_j (x_j - mean_j), exact. RBF SVM: the gradient of the
// calibrated margin at x times (x - mean), flagged approximate. GBDT models
// are rejected.
Attribution linear_shap(const TrainedModel& model, std::span<const double> x,
                        std::span<const double> background_mean);

// Seeded subsample of at most `rows` training rows.
Matrix sample_background(const Matrix& x, std::size_t rows, std::uint64_t seed);
std::vector<double> column_means(const Matrix& x);

struct ImportanceEntry {
  std::size_t feature = 0;
  std::string label;  // "(L_i,R_j):<kind>"
  double mean_abs = 0;
};

struct ImportanceReport {
  int w = 0;
  bool approximate = false;
  std::vector<ImportanceEntry> ranked;  // non-increasing mean_abs
};

// Mean |contribution| per feature, labeled with the window layout for w.
ImportanceReport aggregate_importance(std::span<const Attribution> attributions,
                                      int w);

// CSV: rank,feature_index,label,mean_abs_shap
void write_importance(std::ostream& out, const ImportanceReport& report);

}  // namespace sessionseg
