#include "sessionseg/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

namespace sessionseg {

namespace {

constexpr double kTau = 1e-12;

// Q_ij = y_i y_j K(x_i, x_j), cached by column with LRU eviction.
class KernelColumns {
 public:
  KernelColumns(const Matrix& x, const std::vector<double>& y, double gamma,
                std::size_t cache_mb)
      : x_(x), y_(y), gamma_(gamma) {
    const std::size_t column_bytes = std::max<std::size_t>(1, x.rows()) * sizeof(float);
    capacity_ = std::max<std::size_t>(2, cache_mb * 1024 * 1024 / column_bytes);
  }

  const std::vector<float>& column(std::size_t i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    std::vector<float> col(x_.rows());
    const auto xi = x_.row(i);
    for (std::size_t j = 0; j < x_.rows(); ++j) {
      col[j] = static_cast<float>(y_[i] * y_[j] * rbf_kernel(xi, x_.row(j), gamma_));
    }
    lru_.emplace_front(i, std::move(col));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  using Entry = std::pair<std::size_t, std::vector<float>>;
  const Matrix& x_;
  const std::vector<double>& y_;
  double gamma_;
  std::size_t capacity_;
  std::list<Entry> lru_;
  std::unordered_map<std::size_t, std::list<Entry>::iterator> index_;
};

std::vector<double> signs(const Labels& y) {
  std::vector<double> s(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s[i] = y[i] == 1 ? 1.0 : -1.0;
  return s;
}

double decision_on_training(const Matrix& x, const std::vector<double>& ys,
                            const SvmDual& dual, double gamma, std::size_t r) {
  double f = -dual.rho;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (dual.alpha[i] > 0) f += dual.alpha[i] * ys[i] * rbf_kernel(x.row(i), x.row(r), gamma);
  }
  return f;
}

SvmModel to_model(const Matrix& x, const Labels& y, const SvmDual& dual,
                  double gamma) {
  SvmModel m;
  m.gamma = gamma;
  m.rho = dual.rho;
  m.support = Matrix(0, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (dual.alpha[i] > 0) {
      m.support.append_row(x.row(i));
      m.coef.push_back(dual.alpha[i] * (y[i] == 1 ? 1.0 : -1.0));
    }
  }
  return m;
}

}  // namespace

void SvmConfig::validate() const {
  if (!(C > 0) || !std::isfinite(C)) throw ValidationError("C must be > 0");
  if (!(gamma > 0) || !std::isfinite(gamma)) throw ValidationError("gamma must be > 0");
  if (!(tol > 0)) throw ValidationError("tol must be > 0");
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
  if (!(pos_weight > 0)) throw ValidationError("pos_weight must be > 0");
  if (calibration_folds < 0) throw ValidationError("calibration_folds must be >= 0");
}

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  double gamma) {
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

SvmDual solve_svm_dual(const Matrix& x, const Labels& y, const SvmConfig& cfg) {
  cfg.validate();
  check_training_data(x, y);
  const std::size_t n = x.rows();
  const std::vector<double> ys = signs(y);
  KernelColumns q(x, ys, cfg.gamma, cfg.cache_mb);

  SvmDual dual;
  dual.alpha.assign(n, 0.0);
  dual.upper.resize(n);
  for (std::size_t i = 0; i < n; ++i) dual.upper[i] = y[i] == 1 ? cfg.C * cfg.pos_weight : cfg.C;
  auto& alpha = dual.alpha;
  const auto& upper = dual.upper;
  std::vector<double> grad(n, -1.0);  // Q alpha - e with alpha = 0
  const double qd = 1.0;               // K(x, x) for the RBF kernel

  auto at_upper = [&](std::size_t i) { return alpha[i] >= upper[i]; };
  auto at_lower = [&](std::size_t i) { return alpha[i] <= 0; };

  long iter = 0;
  while (iter < cfg.max_iter) {
    // Working set selection, second-order rule.
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i_sel = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (ys[t] > 0) {
        if (!at_upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          i_sel = static_cast<std::ptrdiff_t>(t);
        }
      } else if (!at_lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        i_sel = static_cast<std::ptrdiff_t>(t);
      }
    }
    if (i_sel < 0) break;
    const auto i = static_cast<std::size_t>(i_sel);
    const std::vector<float> qi = q.column(i);
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j_sel = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (ys[t] > 0) {
        if (!at_lower(t)) {
          const double grad_diff = gmax + grad[t];
          gmax2 = std::max(gmax2, grad[t]);
          if (grad_diff > 0) {
            double quad = qd + qd - 2.0 * ys[i] * qi[t];
            if (quad <= 0) quad = kTau;
            const double obj = -(grad_diff * grad_diff) / quad;
            if (obj <= best_obj) {
              best_obj = obj;
              j_sel = static_cast<std::ptrdiff_t>(t);
            }
          }
        }
      } else if (!at_upper(t)) {
        const double grad_diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
        if (grad_diff > 0) {
          double quad = qd + qd + 2.0 * ys[i] * qi[t];
          if (quad <= 0) quad = kTau;
          const double obj = -(grad_diff * grad_diff) / quad;
          if (obj <= best_obj) {
            best_obj = obj;
            j_sel = static_cast<std::ptrdiff_t>(t);
          }
        }
      }
    }
    if (gmax + gmax2 < cfg.tol || j_sel < 0) break;
    const auto j = static_cast<std::size_t>(j_sel);
    const std::vector<float>& qj = q.column(j);
    ++iter;

    const double ci = upper[i], cj = upper[j];
    const double old_i = alpha[i], old_j = alpha[j];
    double ai = old_i, aj = old_j;
    if (ys[i] != ys[j]) {
      double quad = qd + qd + 2.0 * qi[j];
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0) {
        if (aj < 0) { aj = 0; ai = diff; }
      } else if (ai < 0) {
        ai = 0;
        aj = -diff;
      }
      if (diff > ci - cj) {
        if (ai > ci) { ai = ci; aj = ci - diff; }
      } else if (aj > cj) {
        aj = cj;
        ai = cj + diff;
      }
    } else {
      double quad = qd + qd - 2.0 * qi[j];
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > ci) {
        if (ai > ci) { ai = ci; aj = sum - ci; }
      } else if (aj < 0) {
        aj = 0;
        ai = sum;
      }
      if (sum > cj) {
        if (aj > cj) { aj = cj; ai = sum - cj; }
      } else if (ai < 0) {
        ai = 0;
        aj = sum;
      }
    }
    alpha[i] = ai;
    alpha[j] = aj;
    const double di = ai - old_i, dj = aj - old_j;
    for (std::size_t k = 0; k < n; ++k) grad[k] += qi[k] * di + qj[k] * dj;
  }
  dual.iterations = iter;

  // Offset: average over free vectors, else midpoint of the feasible range.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = ys[t] * grad[t];
    if (at_upper(t)) {
      if (ys[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (at_lower(t)) {
      if (ys[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  dual.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2;
  return dual;
}

double svm_kkt_residual(const Matrix& x, const Labels& y, const SvmDual& dual,
                        double gamma) {
  const std::vector<double> ys = signs(y);
  double worst = 0;
  double balance = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double a = dual.alpha[i];
    const double c = dual.upper[i];
    balance += a * ys[i];
    worst = std::max({worst, -a, a - c});
    const double margin = ys[i] * decision_on_training(x, ys, dual, gamma, i);
    if (a <= 0) {
      worst = std::max(worst, 1.0 - margin);
    } else if (a >= c) {
      worst = std::max(worst, margin - 1.0);
    } else {
      worst = std::max(worst, std::abs(margin - 1.0));
    }
  }
  return std::max(worst, std::abs(balance));
}

double SvmModel::decision(std::span<const double> x) const {
  if (x.size() != support.cols()) {
    throw ValidationError("input has " + std::to_string(x.size()) +
                          " features, model expects " +
                          std::to_string(support.cols()));
  }
  double f = -rho;
  for (std::size_t i = 0; i < support.rows(); ++i) {
    f += coef[i] * rbf_kernel(support.row(i), x, gamma);
  }
  return f;
}

double SvmModel::margin(std::span<const double> x) const {
  return -(platt_a * decision(x) + platt_b);
}

std::pair<double, double> fit_platt(std::span<const double> dec, const Labels& y) {
  if (dec.size() != y.size() || dec.empty()) {
    throw ValidationError("platt: decision values and labels differ in length");
  }
  double prior1 = 0, prior0 = 0;
  for (int v : y) (v == 1 ? prior1 : prior0) += 1;
  const int max_iter = 100;
  const double min_step = 1e-10, sigma = 1e-12, eps = 1e-5;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(dec.size());
  for (std::size_t i = 0; i < dec.size(); ++i) t[i] = y[i] == 1 ? hi : lo;

  auto objective = [&](double a, double b) {
    double f = 0;
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const double z = dec[i] * a + b;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z))
                  : (t[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };
  double a = 0.0;
  double b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(a, b);
  for (int it = 0; it < max_iter; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const double z = dec[i] * a + b;
      double p, q;
      if (z >= 0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += dec[i] * dec[i] * d2;
      h22 += d2;
      h21 += dec[i] * d2;
      const double d1 = t[i] - p;
      g1 += dec[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < eps && std::abs(g2) < eps) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= min_step) {
      const double na = a + step * da, nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2;
    }
    if (step < min_step) break;
  }
  return {a, b};
}

SvmModel train_svm(const Matrix& x, const Labels& y, const SvmConfig& cfg) {
  cfg.validate();
  check_training_data(x, y);
  if (x.rows() > cfg.max_samples) {
    throw ValidationError("kernel SVM limited to " + std::to_string(cfg.max_samples) +
                          " rows, got " + std::to_string(x.rows()));
  }
  const std::size_t n = x.rows();
  const int k = cfg.calibration_folds;

  // Stratified internal folds for out-of-fold calibration scores.
  std::vector<double> oof(n, 0.0);
  bool have_oof = false;
  if (k >= 2) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (y[i] == 1 ? pos : neg).push_back(i);
    if (pos.size() >= static_cast<std::size_t>(k) && neg.size() >= static_cast<std::size_t>(k)) {
      Rng rng(derive_seed(cfg.seed, 0x5e));
      rng.shuffle(pos);
      rng.shuffle(neg);
      std::vector<int> fold(n);
      for (std::size_t i = 0; i < pos.size(); ++i) fold[pos[i]] = static_cast<int>(i % k);
      for (std::size_t i = 0; i < neg.size(); ++i) fold[neg[i]] = static_cast<int>(i % k);
      have_oof = true;
      for (int f = 0; f < k && have_oof; ++f) {
        std::vector<std::size_t> train_rows, held;
        for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? held : train_rows).push_back(i);
        Labels yt;
        for (auto r : train_rows) yt.push_back(y[r]);
        const Matrix xt = x.select_rows(train_rows);
        const SvmDual dual = solve_svm_dual(xt, yt, cfg);
        const SvmModel part = to_model(xt, yt, dual, cfg.gamma);
        for (auto r : held) oof[r] = part.decision(x.row(r));
      }
    }
  }

  const SvmDual dual = solve_svm_dual(x, y, cfg);
  SvmModel model = to_model(x, y, dual, cfg.gamma);
  if (!have_oof) {
    for (std::size_t i = 0; i < n; ++i) oof[i] = model.decision(x.row(i));
  }
  std::tie(model.platt_a, model.platt_b) = fit_platt(oof, y);
  return model;
}

}  // namespace sessionseg
