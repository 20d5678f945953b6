#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "sessionseg/behavior_embed.hpp"
#include "sessionseg/features.hpp"

using namespace sessionseg;

namespace {

double sgns_loss(std::span<const double> in, const std::vector<std::vector<double>>& outs) {
  double loss = 0;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    double dot = 0;
    for (std::size_t i = 0; i < in.size(); ++i) dot += in[i] * outs[k][i];
    loss += k == 0 ? -std::log(sigmoid(dot)) : -std::log(sigmoid(-dot));
  }
  return loss;
}

std::vector<Session> two_cluster_sessions(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Session> out;
  for (std::size_t s = 0; s < n; ++s) {
    const char cluster = s % 2 ? 'a' : 'b';
    Session session{"s" + std::to_string(s), {}};
    for (int k = 0; k < 6; ++k) {
      session.items.push_back(std::string(1, cluster) + std::to_string(rng.below(8)));
    }
    out.push_back(std::move(session));
  }
  return out;
}

double table_cosine(const EmbeddingTable& t, const std::string& a, const std::string& b) {
  return cosine(*t.lookup(a), *t.lookup(b));
}

}  // namespace

TEST_SUITE("behavior_embed") {
  TEST_CASE("sgns update follows the analytic gradient") {
    Rng rng(3);
    const std::size_t dim = 5;
    std::vector<double> in(dim);
    std::vector<std::vector<double>> outs(3, std::vector<double>(dim));
    for (auto& v : in) v = rng.normal();
    for (auto& o : outs)
      for (auto& v : o) v = rng.normal();

    const auto grad_in = oracle::numeric_gradient(
        [&](std::span<const double> x) { return sgns_loss(x, outs); }, in);
    std::vector<std::vector<double>> grad_out;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      grad_out.push_back(oracle::numeric_gradient(
          [&](std::span<const double> x) {
            auto copy = outs;
            copy[k].assign(x.begin(), x.end());
            return sgns_loss(in, copy);
          },
          outs[k]));
    }

    auto in2 = in;
    auto outs2 = outs;
    std::vector<std::span<double>> spans;
    for (auto& o : outs2) spans.emplace_back(o);
    std::vector<double> scratch(dim);
    const double lr = 0.01;
    const double loss = sgns::update<double>(in2, spans, lr, scratch);
    CHECK(loss == doctest::Approx(sgns_loss(in, outs)).epsilon(1e-12));
    for (std::size_t i = 0; i < dim; ++i) {
      CHECK((in[i] - in2[i]) / lr == doctest::Approx(grad_in[i]).epsilon(1e-6));
      for (std::size_t k = 0; k < outs.size(); ++k) {
        CHECK((outs[k][i] - outs2[k][i]) / lr == doctest::Approx(grad_out[k][i]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("co-occurring items end up closer than items from other clusters") {
    SgnsConfig cfg;
    cfg.vector_size = 16;
    cfg.window = 3;
    cfg.negative = 5;
    cfg.epochs = 15;
    cfg.sample = 0;
    int holds = 0;
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
      cfg.seed = static_cast<std::uint64_t>(seed);
      const auto sessions = two_cluster_sessions(100 + seed, 200);
      const auto t = train_behavior_embeddings(sessions, cfg, {});
      double within = 0, across = 0;
      int nw = 0, na = 0;
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          const auto ai = "a" + std::to_string(i), aj = "a" + std::to_string(j);
          const auto bj = "b" + std::to_string(j);
          if (i != j) {
            within += table_cosine(t, ai, aj);
            ++nw;
          }
          across += table_cosine(t, ai, bj);
          ++na;
        }
      }
      if (within / nw > across / na) ++holds;
    }
    CHECK(holds >= 19);
  }

  TEST_CASE("training is deterministic for one worker") {
    SgnsConfig cfg;
    cfg.vector_size = 8;
    cfg.epochs = 3;
    const auto sessions = two_cluster_sessions(1, 50);
    CHECK(train_behavior_embeddings(sessions, cfg, {}) ==
          train_behavior_embeddings(sessions, cfg, {}));
  }

  TEST_CASE("excluded sessions are not trained on") {
    SgnsConfig cfg;
    cfg.vector_size = 4;
    cfg.epochs = 1;
    std::vector<Session> sessions{{"keep", {"A", "B"}}, {"drop", {"C", "D"}}};
    SgnsReport report;
    const auto t = train_behavior_embeddings(sessions, cfg, {"drop"}, &report);
    CHECK(report.training_sessions == 1);
    CHECK(report.excluded_sessions == 1);
    CHECK(report.vocabulary == 2);
    CHECK(report.epoch_loss.size() == 1);
    CHECK(t.contains("A"));
    CHECK_FALSE(t.contains("C"));
    CHECK_FALSE(lookup(t, "C").has_value());
    CHECK_THROWS_AS(train_behavior_embeddings(sessions, cfg, {"keep", "drop"}), ValidationError);
  }

  TEST_CASE("default hyperparameters") {
    const SgnsConfig cfg;
    CHECK(cfg.vector_size == 200);
    CHECK(cfg.window == 6);
    CHECK(cfg.min_count == 1);
    CHECK(cfg.epochs == 100);
    CHECK(cfg.sample == 1e-3);
    SgnsConfig bad;
    bad.vector_size = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("table save and load round-trip") {
    EmbeddingTable t(3);
    const std::vector<float> a{1.5f, -2.0f, 0.1f}, b{0, 0, 3e-20f};
    t.add("A", a);
    t.add("item with spaces", b);
    std::stringstream buf;
    save_table(t, buf);
    const std::string bytes = buf.str();
    std::istringstream in(bytes);
    const auto back = load_table(in);
    CHECK(back == t);
    CHECK(back.dim() == 3);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_table(truncated), ValidationError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    std::istringstream corrupt(flipped);
    CHECK_THROWS_AS(load_table(corrupt), ValidationError);
    std::istringstream garbage("not a table");
    CHECK_THROWS_AS(load_table(garbage), ValidationError);
  }

  TEST_CASE("table rejects bad vectors") {
    EmbeddingTable t(2);
    const std::vector<float> ok{1, 2};
    t.add("A", ok);
    CHECK_THROWS_AS(t.add("A", ok), ValidationError);
    const std::vector<float> short_vec{1};
    CHECK_THROWS_AS(t.add("B", short_vec), ValidationError);
    const std::vector<float> nan_vec{1, std::nanf("")};
    CHECK_THROWS_AS(t.add("C", nan_vec), ValidationError);
  }
}
