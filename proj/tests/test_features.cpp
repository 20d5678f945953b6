#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sessionseg/features.hpp"

using namespace sessionseg;

namespace {

struct Fixture {
  Catalog catalog;
  EmbeddingTable behavior{2};
  FieldEmbedder title{std::make_shared<HashedNgramProvider>(32)};
  FieldEmbedder brand{std::make_shared<HashedNgramProvider>(32)};

  Fixture() {
    catalog.add({"A", "red pen", "Acme", 100.0});
    catalog.add({"B", "red pen", "Acme", 200.0});
    catalog.add({"C", "green tea", "", std::nullopt});
    catalog.add({"D", "tea cup", "Leaf", 0.0});
    const std::vector<float> a{1, 0}, b{1, 1}, d{0, -2};
    behavior.add("A", a);
    behavior.add("B", b);
    behavior.add("D", d);
  }

  FeatureContext ctx() const { return {&catalog, &behavior, &title, &brand}; }
};

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("dimensions") {
    CHECK(feature_dim(1) == 4);
    CHECK(feature_dim(2) == 24);
    CHECK(feature_dim(3) == 60);
    CHECK(feature_dim(4) == 112);
    CHECK(pair_count(4) == 28);
    CHECK_THROWS_AS(feature_dim(0), ValidationError);
  }

  TEST_CASE("pairs are lexicographic") {
    const auto p = pair_index(2);
    const std::vector<std::pair<int, int>> want{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    CHECK(p == want);
  }

  TEST_CASE("labels") {
    CHECK(feature_label(0, 4) == "(L_4,L_3):behavior");
    CHECK(feature_label(14, 2) == "(L_1,R_1):title");
    CHECK(feature_label(23, 2) == "(R_1,R_2):price");
    CHECK(feature_label(1, 1) == "(L_1,R_1):brand");
    CHECK(position_label(3, 2) == "R_2");
    CHECK_THROWS_AS(feature_label(24, 2), ValidationError);
  }

  TEST_CASE("window padding repeats the nearest item on the same side") {
    const Session s{"s", {"u1", "u2", "u3", "u4"}};
    CHECK(window_items(s, 0, 2) == std::vector<std::string>{"u1", "u1", "u2", "u3"});
    CHECK(window_items(s, 2, 2) == std::vector<std::string>{"u2", "u3", "u4", "u4"});
    CHECK(window_items(s, 1, 3) ==
          std::vector<std::string>{"u1", "u1", "u2", "u3", "u4", "u4"});
    CHECK_THROWS(window_items(s, 3, 2));
  }

  TEST_CASE("price similarity") {
    CHECK(price_similarity(100, 200) == doctest::Approx(0.37153990307187307).epsilon(1e-15));
    CHECK(price_similarity(5, 5) == 1.0);
    CHECK(price_similarity(0, 1) == doctest::Approx(std::exp(-1.0)));
    CHECK(price_similarity(3, 7) == price_similarity(7, 3));
    CHECK_THROWS_AS(price_similarity(-1, 2), ValidationError);
    CHECK_THROWS_AS(price_similarity(NAN, 2), ValidationError);
  }

  TEST_CASE("cosine identities") {
    const std::vector<double> u{1, 2, 3}, v{-2, 0.5, 4}, z{0, 0, 0};
    CHECK(cosine(u, u) == doctest::Approx(1.0));
    CHECK(cosine(u, v) == doctest::Approx(cosine(v, u)));
    const std::vector<double> neg{-1, -2, -3}, scaled{3, 6, 9};
    CHECK(cosine(u, neg) == doctest::Approx(-1.0));
    CHECK(cosine(u, scaled) == doctest::Approx(1.0));
    CHECK(cosine(u, z) == 0.0);
    const std::vector<double> short_v{1, 2};
    CHECK_THROWS_AS(cosine(u, short_v), ValidationError);
    const std::vector<double> a{1, 0}, b{0, 1};
    CHECK(cosine(a, b) == 0.0);
  }

  TEST_CASE("feature vector values for a hand-built window") {
    Fixture f;
    const Session s{"s", {"A", "B", "C", "D"}};
    const auto v = build_feature_vector(s, 0, 1, f.ctx());
    REQUIRE(v.size() == 4);
    CHECK(v[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(v[1] == doctest::Approx(1.0));
    CHECK(v[2] == doctest::Approx(1.0));
    CHECK(v[3] == doctest::Approx(0.37153990307187307));

    const auto w = build_feature_vector(s, 2, 1, f.ctx());
    CHECK(w[0] == 0.0);  // C has no behavior vector
    CHECK(w[1] == 0.0);  // C has no brand
    CHECK(w[3] == 0.0);  // C has no price

    const auto x = build_feature_vector(s, 0, 2, f.ctx());
    REQUIRE(x.size() == 24);
    // (L_2,L_1) are both A after padding.
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[3] == 1.0);
    // (L_1,R_2) = (A,C)
    CHECK(x[4 * 4 + 0] == 0.0);
  }

  TEST_CASE("next-item price reading") {
    Fixture f;
    auto ctx = f.ctx();
    ctx.price_mode = PriceMode::kNextItemMin;
    const Session s{"s", {"A", "B", "A", "B"}};
    const auto v = build_feature_vector(s, 1, 1, ctx);
    // B at 1 is followed by A (100), A at 2 by B (200).
    CHECK(v[3] == doctest::Approx(std::exp(-100.0 / 100.0)));
  }

  TEST_CASE("unknown items are reported") {
    Fixture f;
    const Session s{"s", {"A", "Z"}};
    CHECK_THROWS_AS(build_feature_vector(s, 0, 1, f.ctx()), NotFoundError);
  }

  TEST_CASE("dataset rows, subset and round-trip") {
    Fixture f;
    std::vector<AnnotatedSession> ann{{{"s1", {"A", "B", "C"}}, {0, 1}, ""},
                                      {{"s2", {"D"}}, {}, ""},
                                      {{"s3", {"D", "A"}}, {1}, ""}};
    const auto data = build_dataset(ann, 2, f.ctx());
    CHECK(data.x.rows() == 3);
    CHECK(data.x.cols() == 24);
    CHECK(data.y == Labels{0, 1, 1});
    CHECK(data.groups == std::vector<std::string>{"s1", "s1", "s3"});
    CHECK(data.gap_index == std::vector<std::size_t>{0, 1, 0});
    CHECK(data.skipped_sessions == 1);
    CHECK(data.positives() == 2);

    const std::vector<std::string> keep{"s3"};
    const auto sub = subset_by_groups(data, keep);
    CHECK(sub.x.rows() == 1);
    CHECK(sub.x(0, 5) == data.x(2, 5));

    std::stringstream buf;
    write_dataset(buf, data);
    const auto back = read_dataset(buf);
    CHECK(back.w == 2);
    CHECK(back.y == data.y);
    CHECK(back.groups == data.groups);
    for (std::size_t r = 0; r < data.x.rows(); ++r)
      for (std::size_t c = 0; c < data.x.cols(); ++c) CHECK(back.x(r, c) == data.x(r, c));
  }

  TEST_CASE("dataset header mismatches are rejected") {
    std::istringstream bad("# sessionseg-features v1 w=2 d=6 layout=1 cols=20\n");
    CHECK_THROWS_AS(read_dataset(bad), ValidationError);
    std::istringstream other("id,label\n");
    CHECK_THROWS_AS(read_dataset(other), ValidationError);
  }
}
