#include <cmath>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "sessionseg/features.hpp"
#include "sessionseg/text_embed.hpp"

using namespace sessionseg;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("text_embed") {
  TEST_CASE("hashed vectors are unit length and deterministic") {
    const auto a = hashed_ngram_embed("Blue ballpoint pen", 64, 0);
    CHECK(a.size() == 64);
    CHECK(norm(a) == doctest::Approx(1.0));
    CHECK(a == hashed_ngram_embed("Blue ballpoint pen", 64, 0));
    CHECK(a == hashed_ngram_embed("  Blue ballpoint pen \t", 64, 0));
    CHECK(a != hashed_ngram_embed("Blue ballpoint pen", 64, 1));
  }

  TEST_CASE("blank text maps to the zero vector") {
    for (const char* t : {"", "   ", "\t\n"}) {
      const auto v = hashed_ngram_embed(t, 16, 0);
      CHECK(norm(v) == 0.0);
    }
    CHECK_THROWS_AS(hashed_ngram_embed("x", 0, 0), ValidationError);
  }

  TEST_CASE("similar strings are closer than unrelated ones") {
    const auto a = hashed_ngram_embed("wireless mouse black", 256, 0);
    const auto b = hashed_ngram_embed("wireless mouse white", 256, 0);
    const auto c = hashed_ngram_embed("organic green tea", 256, 0);
    CHECK(cosine(a, b) > cosine(a, c));
    CHECK(cosine(a, b) > 0.5);
  }

  TEST_CASE("multibyte text is split by code point") {
    const auto a = hashed_ngram_embed("ボールペン", 128, 0);
    CHECK(norm(a) == doctest::Approx(1.0));
    CHECK(cosine(a, hashed_ngram_embed("ボールペン 黒", 128, 0)) > 0.5);
  }

  TEST_CASE("field names") {
    CHECK(parse_text_field("title") == TextField::kTitle);
    CHECK(to_string(TextField::kBrand) == "brand");
    CHECK_THROWS_AS(parse_text_field("color"), ValidationError);
  }

  TEST_CASE("precomputed vectors with fallback") {
    std::stringstream buf;
    write_precomputed(buf, 3,
                      {{PrecomputedProvider::key("A", TextField::kTitle), {1, 0, 0.5}},
                       {PrecomputedProvider::key("A", TextField::kBrand), {0, 2, 0}}});
    const auto p = load_precomputed(buf);
    CHECK(p->dim() == 3);
    CHECK(p->stored() == 2);
    CHECK(p->embed("A", TextField::kTitle, "ignored") == std::vector<double>{1, 0, 0.5});
    CHECK(p->embed("B", TextField::kTitle, "pen") == hashed_ngram_embed("pen", 3, 0));
  }

  TEST_CASE("precomputed file errors") {
    std::istringstream no_header("A\ttitle\t1 2\n");
    CHECK_THROWS_AS(load_precomputed(no_header), ValidationError);
    std::istringstream wrong_dim("# sessionseg-textvec v1 dim=2\nA\ttitle\t1 2 3\n");
    CHECK_THROWS_AS(load_precomputed(wrong_dim), ValidationError);
    std::istringstream bad_value("# sessionseg-textvec v1 dim=2\nA\ttitle\t1 x\n");
    CHECK_THROWS_AS(load_precomputed(bad_value), ParseError);
    std::istringstream dup("# sessionseg-textvec v1 dim=1\nA\ttitle\t1\nA\ttitle\t2\n");
    CHECK_THROWS_AS(load_precomputed(dup), ParseError);
    std::istringstream ok("# sessionseg-textvec v1 dim=2\n");
    CHECK_THROWS_AS(load_precomputed(ok, std::make_shared<HashedNgramProvider>(5)),
                    ValidationError);
  }

  TEST_CASE("field embedder caches per item and field") {
    FieldEmbedder e(std::make_shared<HashedNgramProvider>(32));
    const Item item{"A", "red pen", "Acme", 1.0};
    const auto& t1 = e.embed_field(item, TextField::kTitle);
    const auto& t2 = e.embed_field(item, TextField::kTitle);
    CHECK(&t1 == &t2);
    CHECK(t1 == hashed_ngram_embed("red pen", 32, 0));
    CHECK(e.embed_field(item, TextField::kBrand) == hashed_ngram_embed("Acme", 32, 0));
    CHECK(e.computed() == 2);

    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&] {
        for (int i = 0; i < 50; ++i) {
          e.embed_field(Item{"I" + std::to_string(i), "t" + std::to_string(i), "", {}},
                        TextField::kTitle);
        }
      });
    }
    for (auto& th : threads) th.join();
    CHECK(e.computed() == 52);
  }
}
