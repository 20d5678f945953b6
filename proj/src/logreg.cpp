#include "sessionseg/logreg.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace sessionseg {

namespace {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

void LogregConfig::validate() const {
  if (!(C > 0) || !std::isfinite(C)) throw ValidationError("C must be > 0");
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
  if (!(tol > 0)) throw ValidationError("tol must be > 0");
  if (!(pos_weight > 0)) throw ValidationError("pos_weight must be > 0");
}

double LogregModel::margin(std::span<const double> x) const {
  if (x.size() != weights.size()) {
    throw ValidationError("input has " + std::to_string(x.size()) +
                          " features, model expects " +
                          std::to_string(weights.size()));
  }
  double m = bias;
  for (std::size_t i = 0; i < x.size(); ++i) m += weights[i] * x[i];
  return m;
}

double logreg_objective(std::span<const double> params, const Matrix& x,
                        const Labels& y, const LogregConfig& cfg,
                        std::vector<double>* grad) {
  const std::size_t d = x.cols();
  if (params.size() != d + 1) throw ValidationError("parameter length mismatch");
  double obj = 0;
  for (std::size_t j = 0; j < d; ++j) obj += 0.5 * params[j] * params[j];
  if (grad) {
    grad->assign(d + 1, 0.0);
    for (std::size_t j = 0; j < d; ++j) (*grad)[j] = params[j];
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    double m = params[d];
    for (std::size_t j = 0; j < d; ++j) m += params[j] * row[j];
    const double s = cfg.C * (y[r] == 1 ? cfg.pos_weight : 1.0);
    obj += s * softplus(y[r] == 1 ? -m : m);
    if (grad) {
      const double g = s * (sigmoid(m) - y[r]);
      for (std::size_t j = 0; j < d; ++j) (*grad)[j] += g * row[j];
      (*grad)[d] += g;
    }
  }
  return obj;
}

LogregModel train_logreg(const Matrix& x, const Labels& y,
                         const LogregConfig& cfg) {
  cfg.validate();
  check_training_data(x, y);
  const std::size_t d = x.cols();
  const std::size_t p = d + 1;

  std::vector<double> params(p, 0.0);
  double wpos = 0, wneg = 0;
  for (int v : y) (v == 1 ? wpos : wneg) += v == 1 ? cfg.pos_weight : 1.0;
  params[d] = std::log(wpos / wneg);

  std::vector<double> grad;
  double obj = logreg_objective(params, x, y, cfg, &grad);
  LogregModel model;
  auto grad_norm = [&] {
    double s = 0;
    for (double g : grad) s += g * g;
    return std::sqrt(s);
  };

  Eigen::MatrixXd hessian(p, p);
  Eigen::VectorXd g(p);
  int iter = 0;
  for (; iter < cfg.max_iter && grad_norm() > cfg.tol; ++iter) {
    hessian.setZero();
    for (std::size_t j = 0; j < d; ++j) hessian(j, j) = 1.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto row = x.row(r);
      double m = params[d];
      for (std::size_t j = 0; j < d; ++j) m += params[j] * row[j];
      const double pr = sigmoid(m);
      const double s = cfg.C * (y[r] == 1 ? cfg.pos_weight : 1.0) * pr * (1 - pr);
      if (s == 0) continue;
      for (std::size_t a = 0; a < d; ++a) {
        const double sa = s * row[a];
        for (std::size_t b = 0; b <= a; ++b) hessian(a, b) += sa * row[b];
        hessian(d, a) += sa;
      }
      hessian(d, d) += s;
    }
    hessian = hessian.selfadjointView<Eigen::Lower>();
    // A tiny ridge on the bias keeps separable data well posed.
    hessian(d, d) += 1e-12;
    for (std::size_t j = 0; j < p; ++j) g(j) = grad[j];
    const Eigen::VectorXd step = hessian.ldlt().solve(-g);

    const double slope = g.dot(step);
    double t = 1.0;
    std::vector<double> trial(p);
    std::vector<double> trial_grad;
    double trial_obj = obj;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t j = 0; j < p; ++j) trial[j] = params[j] + t * step(j);
      trial_obj = logreg_objective(trial, x, y, cfg, &trial_grad);
      if (trial_obj <= obj + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    params.swap(trial);
    grad.swap(trial_grad);
    obj = trial_obj;
  }
  model.weights.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(d));
  model.bias = params[d];
  model.iterations = iter;
  model.gradient_norm = grad_norm();
  return model;
}

}  // namespace sessionseg
