#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sessionseg/common.hpp"
#include "sessionseg/csv.hpp"

using namespace sessionseg;

TEST_SUITE("common") {
  TEST_CASE("sigmoid is stable and symmetric") {
    CHECK(sigmoid(0) == 0.5);
    CHECK(sigmoid(800) == 1.0);
    CHECK(sigmoid(-800) == 0.0);
    for (double z : {-5.0, -0.3, 0.7, 12.0}) CHECK(sigmoid(z) + sigmoid(-z) == doctest::Approx(1.0));
  }

  TEST_CASE("rng streams are reproducible and bounded") {
    Rng a(7), b(7), c(8);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const auto va = a.next(), vb = b.next();
      CHECK(va == vb);
      differs = differs || va != c.next();
    }
    CHECK(differs);
    Rng r(1);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const double u = r.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      const auto k = r.below(5);
      CHECK(k < 5);
      seen.insert(k);
    }
    CHECK(seen.size() == 5);
  }

  TEST_CASE("normal draws have unit moments") {
    Rng r(3);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double v = r.normal();
      sum += v;
      sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1) < 0.05);
  }

  TEST_CASE("shuffle is a permutation") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    Rng r(11);
    r.shuffle(v);
    std::multiset<int> s(v.begin(), v.end());
    CHECK(s == std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7});
  }

  TEST_CASE("derive_seed separates streams") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 3) == derive_seed(5, 3));
  }

  TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0}) {
      CHECK(std::stod(format_double(v)) == v);
    }
  }

  TEST_CASE("matrix rows and selection") {
    Matrix m(0, 2);
    m.append_row(std::vector<double>{1, 2});
    m.append_row(std::vector<double>{3, 4});
    m.append_row(std::vector<double>{5, 6});
    CHECK(m.rows() == 3);
    CHECK(m(1, 1) == 4);
    const std::vector<std::size_t> idx{2, 0};
    const Matrix s = m.select_rows(idx);
    CHECK(s(0, 0) == 5);
    CHECK(s(1, 1) == 2);
    CHECK_THROWS_AS(m.append_row(std::vector<double>{1}), ValidationError);
  }

  TEST_CASE("check_training_data rejects bad input") {
    Matrix x(2, 1);
    CHECK_NOTHROW(check_training_data(x, {0, 1}));
    CHECK_THROWS_AS(check_training_data(x, {1, 1}), ValidationError);
    CHECK_THROWS_AS(check_training_data(x, {0, 2}), ValidationError);
    CHECK_THROWS_AS(check_training_data(x, {0}), ValidationError);
    x(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(check_training_data(x, {0, 1}), ValidationError);
  }
}

TEST_SUITE("csv") {
  TEST_CASE("quoted fields with commas, quotes and newlines") {
    std::istringstream in("a,\"b,c\",\"say \"\"hi\"\"\"\n\"multi\nline\",x,\n");
    csv::Reader r(in);
    auto rec = r.next();
    REQUIRE(rec);
    CHECK(*rec == csv::Record{"a", "b,c", "say \"hi\""});
    rec = r.next();
    REQUIRE(rec);
    CHECK(*rec == csv::Record{"multi\nline", "x", ""});
    CHECK_FALSE(r.next());
  }

  TEST_CASE("unterminated quote is a parse error") {
    std::istringstream in("a,\"open\n");
    csv::Reader r(in);
    CHECK_THROWS_AS(r.next(), ParseError);
  }

  TEST_CASE("escape round-trips through the reader") {
    const csv::Record fields{"plain", "com,ma", "qu\"ote", "new\nline", ""};
    std::istringstream in(csv::join(fields) + "\n");
    csv::Reader r(in);
    CHECK(*r.next() == fields);
  }
}
