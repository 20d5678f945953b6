#pragma once

#include <span>
#include <vector>

#include "sessionseg/common.hpp"

namespace sessionseg {

struct LogregConfig {
  double C = 1.0;  // inverse L2 strength
  int max_iter = 100;
  double tol = 1e-6;
  double pos_weight = 1.0;

  void validate() const;
};

struct LogregModel {
  std::vector<double> weights;
  double bias = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;

  double margin(std::span<const double> x) const;
};

// Objective 0.5 * |w|^2 + C * sum_i s_i * logloss(y_i, w.x_i + b), where s_i
// is pos_weight for positives. `params` packs (w_1..w_d, b). Fills `grad`
// (same length) when non-null.
double logreg_objective(std::span<const double> params, const Matrix& x,
                        const Labels& y, const LogregConfig& cfg,
                        std::vector<double>* grad = nullptr);

// Damped Newton iterations until |grad|_2 <= tol or max_iter.
LogregModel train_logreg(const Matrix& x, const Labels& y,
                         const LogregConfig& cfg);

}  // namespace sessionseg
