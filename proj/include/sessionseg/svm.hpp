#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sessionseg/common.hpp"

namespace sessionseg {

struct SvmConfig {
  double C = 1.0;
  double gamma = 0.1;  // RBF width: K(a, b) = exp(-gamma |a - b|^2)
  double tol = 1e-3;   // maximal violating pair gap at termination
  long max_iter = 10'000'000;
  std::size_t max_samples = 50'000;
  std::size_t cache_mb = 256;
  int calibration_folds = 3;
  double pos_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  double gamma);

// Solution of the soft-margin dual for one training set.
struct SvmDual {
  std::vector<double> alpha;    // one per training row, 0 <= alpha_i <= C_i
  std::vector<double> upper;    // C_i (C scaled by pos_weight for positives)
  double rho = 0.0;             // decision(x) = sum_i alpha_i y_i K(x_i, x) - rho
  long iterations = 0;
};

// SMO with second-order working-set selection.
SvmDual solve_svm_dual(const Matrix& x, const Labels& y, const SvmConfig& cfg);

// Largest violation of the KKT conditions, measured on y_i * decision(x_i):
// >= 1 for alpha = 0, <= 1 for alpha = C, = 1 in between; also includes
// |sum_i alpha_i y_i| and any box violation.
double svm_kkt_residual(const Matrix& x, const Labels& y, const SvmDual& dual,
                        double gamma);

struct SvmModel {
  double gamma = 0.0;
  Matrix support;             // support vectors, one per row
  std::vector<double> coef;   // alpha_i * y_i (y in {-1, +1})
  double rho = 0.0;
  double platt_a = -1.0;      // P(y = 1 | f) = 1 / (1 + exp(A f + B))
  double platt_b = 0.0;

  double decision(std::span<const double> x) const;
  // Calibrated log-odds, -(A f + B).
  double margin(std::span<const double> x) const;
};

// Platt scaling fit (Newton with backtracking on the regularized targets).
std::pair<double, double> fit_platt(std::span<const double> decision,
                                    const Labels& y);

// Trains the final machine on all rows and calibrates it on out-of-fold
// decision values from `calibration_folds` internal folds.
SvmModel train_svm(const Matrix& x, const Labels& y, const SvmConfig& cfg);

}  // namespace sessionseg
