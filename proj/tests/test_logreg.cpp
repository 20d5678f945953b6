#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sessionseg/logreg.hpp"

using namespace sessionseg;

namespace {

void noisy_linear(std::uint64_t seed, std::size_t n, std::size_t d, Matrix& x, Labels& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  x = Matrix(n, d);
  y.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    double m = -0.5;
    for (std::size_t c = 0; c < d; ++c) {
      x(r, c) = nd(rng);
      m += (c % 2 ? -1.0 : 1.5) * x(r, c);
    }
    y[r] = std::uniform_real_distribution<double>(0, 1)(rng) < sigmoid(m) ? 1 : 0;
  }
}

}  // namespace

TEST_SUITE("logreg") {
  TEST_CASE("objective gradient matches finite differences") {
    Matrix x;
    Labels y;
    noisy_linear(1, 60, 4, x, y);
    LogregConfig cfg;
    cfg.C = 0.7;
    cfg.pos_weight = 2.5;
    const std::vector<double> at{0.3, -0.2, 0.9, 0.05, -0.4};
    std::vector<double> grad;
    logreg_objective(at, x, y, cfg, &grad);
    const auto num = oracle::numeric_gradient(
        [&](std::span<const double> p) { return logreg_objective(p, x, y, cfg); }, at);
    for (std::size_t i = 0; i < at.size(); ++i) {
      CHECK(std::abs(grad[i] - num[i]) <= 1e-4 * std::max(1.0, std::abs(num[i])));
    }
  }

  TEST_CASE("newton reaches a stationary point") {
    Matrix x;
    Labels y;
    noisy_linear(2, 400, 5, x, y);
    LogregConfig cfg;
    const auto m = train_logreg(x, y, cfg);
    CHECK(m.gradient_norm <= cfg.tol);
    CHECK(m.iterations < 20);
    CHECK(m.weights[0] > 0.5);
    CHECK(m.weights[1] < -0.3);
  }

  TEST_CASE("one feature: the weight sign follows the correlation") {
    Matrix x(6, 1);
    const double v[] = {-2, -1, -0.5, 0.5, 1, 2};
    for (int i = 0; i < 6; ++i) x(i, 0) = v[i];
    Labels up{0, 0, 1, 0, 1, 1}, down{1, 1, 0, 1, 0, 0};
    CHECK(train_logreg(x, up, {}).weights[0] > 0);
    CHECK(train_logreg(x, down, {}).weights[0] < 0);
  }

  TEST_CASE("vanishing C leaves only the prior") {
    Matrix x;
    Labels y;
    noisy_linear(3, 200, 3, x, y);
    LogregConfig cfg;
    cfg.C = 1e-9;
    const auto m = train_logreg(x, y, cfg);
    double pos = 0;
    for (int v : y) pos += v;
    for (double w : m.weights) CHECK(std::abs(w) < 1e-6);
    CHECK(m.bias == doctest::Approx(std::log(pos / (200 - pos))));
  }

  TEST_CASE("separable data stays finite") {
    Matrix x(4, 1);
    x(0, 0) = -2;
    x(1, 0) = -1;
    x(2, 0) = 1;
    x(3, 0) = 2;
    const auto m = train_logreg(x, {0, 0, 1, 1}, {});
    CHECK(std::isfinite(m.weights[0]));
    CHECK(m.margin(x.row(3)) > 0);
  }

  TEST_CASE("config and shape errors") {
    LogregConfig bad;
    bad.C = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    LogregModel m{{1.0, 2.0}, 0, 0, 0};
    const std::vector<double> x{1};
    CHECK_THROWS_AS(m.margin(x), ValidationError);
  }
}
