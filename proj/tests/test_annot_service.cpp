#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "httplib.h"
#include "oracles.hpp"
#include "sessionseg/annot_service.hpp"

using namespace sessionseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Pool {
  Catalog catalog;
  std::vector<Session> sessions;

  Pool() {
    catalog.add({"A", "red pen", "Acme", 1.5});
    catalog.add({"B", "blue pen", "", std::nullopt});
    catalog.add({"C", "tea", "Leaf", 3.0});
    sessions = {{"s1", {"A", "B"}},
                {"s2", {"A", "B", "C"}},
                {"s3", {"C", "A", "B", "C", "A"}},
                {"lonely", {"A"}}};
  }
};

StoreConfig store_config(const fs::path& log, std::int64_t* clock = nullptr) {
  StoreConfig cfg;
  cfg.log_path = log;
  cfg.annotators = {"ann1", "ann2", "ann3"};
  cfg.reservation_ms = 1000;
  cfg.seed = 3;
  if (clock) cfg.now_ms = [clock] { return *clock; };
  return cfg;
}

ApiRequest get(std::string path, std::string token, std::map<std::string, std::string> q = {}) {
  return {"GET", std::move(path), std::move(q), "", token.empty() ? "" : "Bearer " + token};
}

ApiRequest post(std::string path, std::string token, std::string body) {
  return {"POST", std::move(path), {}, std::move(body), "Bearer " + token};
}

std::string labels_body(std::size_t gaps, int value = 0) {
  return json{{"gap_labels", std::vector<int>(gaps, value)}}.dump();
}

}  // namespace

TEST_SUITE("annot_service") {
  TEST_CASE("each annotator walks through every session once") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    std::set<std::string> seen;
    while (auto next = store.next_unlabeled("ann1")) {
      CHECK(seen.insert(next->session_id).second);
      store.submit(next->session_id, "ann1", std::vector<int>(next->gap_count, 0));
    }
    CHECK(seen == std::set<std::string>{"s1", "s2", "s3"});
    CHECK(store.record_count() == 3);
    CHECK_THROWS_AS(store.next_unlabeled("mallory"), AuthError);
  }

  TEST_CASE("unlabeled sessions come before ones labeled by others") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    const auto first = store.next_unlabeled("ann1");
    store.submit(first->session_id, "ann1", std::vector<int>(first->gap_count, 1));
    const auto second = store.next_unlabeled("ann2");
    CHECK(second->session_id != first->session_id);
    store.submit(second->session_id, "ann2", std::vector<int>(second->gap_count, 1));
    const auto third = store.next_unlabeled("ann3");
    CHECK(third->session_id != first->session_id);
    CHECK(third->session_id != second->session_id);
  }

  TEST_CASE("submission errors") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    const std::vector<int> one{1};
    CHECK_THROWS_AS(store.submit("nope", "ann1", one), NotFoundError);
    CHECK_THROWS_AS(store.submit("lonely", "ann1", std::vector<int>{}), NotFoundError);
    CHECK_THROWS_AS(store.submit("s2", "ann1", one), ValidationError);
    CHECK_THROWS_AS(store.submit("s1", "ann1", std::vector<int>{2}), ValidationError);
    CHECK_THROWS_AS(store.submit("s1", "eve", one), AuthError);
    store.submit("s1", "ann1", one);
    CHECK_THROWS_AS(store.submit("s1", "ann1", one), ConflictError);
    CHECK(store.record_count() == 1);
  }

  TEST_CASE("reservations expire") {
    oracle::TempDir dir;
    Pool p;
    std::int64_t clock = 0;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl", &clock));
    const auto a = store.next_unlabeled("ann1");
    CHECK(store.next_unlabeled("ann1")->session_id == a->session_id);
    const auto b = store.next_unlabeled("ann2");
    CHECK(b->session_id != a->session_id);
    clock = 1500;
    // ann1's hold lapsed, so ann3 can be handed the same session.
    std::set<std::string> got;
    for (int i = 0; i < 1; ++i) got.insert(store.next_unlabeled("ann3")->session_id);
    CHECK(got.count(a->session_id) + got.count(b->session_id) == 1);
  }

  TEST_CASE("export policies") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    CHECK_THROWS_AS(store.export_annotations(ExportPolicy::kMajority), NotFoundError);
    store.submit("s2", "ann2", std::vector<int>{1, 0});
    store.submit("s2", "ann1", std::vector<int>{1, 1});
    store.submit("s2", "ann3", std::vector<int>{0, 0});
    store.submit("s1", "ann1", std::vector<int>{1});
    store.submit("s1", "ann2", std::vector<int>{0});

    const auto majority = store.export_annotations(ExportPolicy::kMajority);
    REQUIRE(majority.size() == 2);
    CHECK(majority[0].session.session_id != majority[1].session.session_id);
    for (const auto& a : majority) {
      if (a.session.session_id == "s2") {
        CHECK(a.gap_labels == std::vector<int>{1, 0});
        CHECK(a.annotator_id == "majority-of-3");
      } else {
        CHECK(a.gap_labels == std::vector<int>{0});  // tie
      }
    }
    const auto first = store.export_annotations(ExportPolicy::kFirstRecord);
    for (const auto& a : first) {
      if (a.session.session_id == "s2") {
        CHECK(a.annotator_id == "ann2");
        CHECK(a.gap_labels == std::vector<int>{1, 0});
      }
    }
    CHECK(parse_export_policy("majority") == ExportPolicy::kMajority);
    CHECK_THROWS_AS(parse_export_policy("vote"), ValidationError);
  }

  TEST_CASE("progress") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    store.submit("s1", "ann1", std::vector<int>{0});
    store.submit("s2", "ann1", std::vector<int>{1, 1});
    store.submit("s3", "ann1", std::vector<int>{1, 1, 1, 0});
    store.submit("s3", "ann2", std::vector<int>{0, 1, 0, 0});
    const auto pr = store.progress();
    CHECK(pr.pool_sessions == 3);
    CHECK(pr.labeled_sessions == 3);
    CHECK(pr.records == 4);
    REQUIRE(pr.annotators.size() == 3);
    for (const auto& a : pr.annotators) {
      if (a.sessions == 0) continue;
      double total = 0;
      for (double f : a.fractions) total += f;
      CHECK(total == doctest::Approx(1.0));
    }
    CHECK(pr.annotators[0].fractions[0] == doctest::Approx(1.0 / 3));
    CHECK(pr.annotators[0].fractions[2] == doctest::Approx(1.0 / 3));
    CHECK(pr.annotators[0].fractions[3] == doctest::Approx(1.0 / 3));
    // s3 has five items, so both of its records count as long.
    CHECK(pr.long_sessions[3] == 1);
    CHECK(pr.long_sessions[1] == 1);
    CHECK(pr.short_sessions[0] == 1);
    CHECK(pr.short_sessions[2] == 1);
    CHECK(pr.to_json().contains("by_length"));
  }

  TEST_CASE("the log survives reopening and drops a torn tail") {
    oracle::TempDir dir;
    Pool p;
    const fs::path log = dir.path() / "sub" / "log.jsonl";
    {
      AnnotationStore store(p.sessions, p.catalog, store_config(log));
      store.submit("s1", "ann1", std::vector<int>{1});
      store.submit("s2", "ann2", std::vector<int>{0, 1});
    }
    {
      std::ofstream out(log, std::ios::app);
      out << R"({"record_id":3,"session_id":"s3","annot)";
    }
    {
      AnnotationStore store(p.sessions, p.catalog, store_config(log));
      CHECK(store.record_count() == 2);
      CHECK(store.dropped_bytes() > 0);
      const auto r = store.submit("s3", "ann1", std::vector<int>{0, 0, 0, 0});
      CHECK(r.record_id == 3);
      CHECK_THROWS_AS(store.submit("s1", "ann1", std::vector<int>{0}), ConflictError);
    }
    AnnotationStore again(p.sessions, p.catalog, store_config(log));
    CHECK(again.record_count() == 3);
    CHECK(again.dropped_bytes() == 0);
    CHECK(again.records()[1].gap_labels == std::vector<int>{0, 1});
  }

  TEST_CASE("corrupt logs are refused") {
    oracle::TempDir dir;
    Pool p;
    const fs::path log = dir.path() / "log.jsonl";
    {
      std::ofstream out(log);
      out << R"({"format":"sessionseg-annotation-log","version":1})" << '\n'
          << "not json\n";
    }
    CHECK_THROWS_AS(AnnotationStore(p.sessions, p.catalog, store_config(log)), ValidationError);
    {
      std::ofstream out(log);
      out << R"({"format":"other","version":1})" << '\n';
    }
    CHECK_THROWS_AS(AnnotationStore(p.sessions, p.catalog, store_config(log)), ValidationError);
  }

  TEST_CASE("pool validation") {
    oracle::TempDir dir;
    Pool p;
    auto dup = p.sessions;
    dup.push_back(dup[0]);
    CHECK_THROWS_AS(AnnotationStore(dup, p.catalog, store_config(dir.path() / "a.jsonl")),
                    ValidationError);
    auto unknown = p.sessions;
    unknown.push_back({"s9", {"A", "Q"}});
    CHECK_THROWS(AnnotationStore(unknown, p.catalog, store_config(dir.path() / "b.jsonl")));
  }

  TEST_CASE("api status codes") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    const AnnotationApi api(store, {{"ann1", "t1"}, {"ann2", "t2"}});

    CHECK(api.handle(get("/api/progress", "")).status == 401);
    CHECK(api.handle(get("/api/progress", "bogus")).status == 401);
    CHECK(api.handle(get("/api/session/next", "t2", {{"annotator", "ann1"}})).status == 401);
    CHECK(api.handle(get("/api/session/next", "t1")).status == 400);
    CHECK(api.handle(get("/api/nowhere", "t1")).status == 404);

    const auto next = api.handle(get("/api/session/next", "t1", {{"annotator", "ann1"}}));
    REQUIRE(next.status == 200);
    const auto session = json::parse(next.body)["session"];
    const std::string id = session["session_id"];
    const std::size_t gaps = session["gap_count"];
    CHECK(session["items"].size() == gaps + 1);

    CHECK(api.handle(post("/api/session/" + id + "/labels", "t1", "{")).status == 400);
    CHECK(api.handle(post("/api/session/" + id + "/labels", "t1", labels_body(gaps + 1))).status ==
          400);
    CHECK(api.handle(post("/api/session/zzz/labels", "t1", labels_body(1))).status == 404);
    CHECK(api.handle(post("/api/session/" + id + "/labels", "t1",
                          json{{"annotator", "ann2"}, {"gap_labels", std::vector<int>(gaps)}}.dump()))
              .status == 401);
    const auto ok = api.handle(post("/api/session/" + id + "/labels", "t1", labels_body(gaps, 1)));
    CHECK(ok.status == 200);
    CHECK(json::parse(ok.body)["record_id"] == 1);
    CHECK(api.handle(post("/api/session/" + id + "/labels", "t1", labels_body(gaps))).status == 409);

    const auto progress = api.handle(get("/api/progress", "t2"));
    CHECK(json::parse(progress.body)["records"] == 1);
    const auto exported = api.handle(get("/api/export", "t1", {{"policy", "majority"}}));
    CHECK(exported.status == 200);
    CHECK(exported.content_type == "application/x-ndjson");
    std::istringstream in(exported.body);
    const auto back = read_annotations(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].gap_labels == std::vector<int>(gaps, 1));
    CHECK(api.handle(get("/api/export", "t1", {{"policy", "vote"}})).status == 400);
  }

  TEST_CASE("http round trip") {
    oracle::TempDir dir;
    Pool p;
    AnnotationStore store(p.sessions, p.catalog, store_config(dir.path() / "log.jsonl"));
    const AnnotationApi api(store, {{"ann1", "t1"}});
    {
      std::ofstream out(dir.path() / "index.html");
      out << "<html>annotate</html>";
    }
    AnnotationServer server(api, dir.path());
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    const httplib::Headers auth{{"Authorization", "Bearer t1"}};

    auto res = client.Get("/api/session/next?annotator=ann1", auth);
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto session = json::parse(res->body)["session"];
    const std::string id = session["session_id"];
    res = client.Post("/api/session/" + id + "/labels", auth,
                      labels_body(session["gap_count"].get<std::size_t>()), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    res = client.Get("/api/progress");
    REQUIRE(res);
    CHECK(res->status == 401);
    res = client.Get("/");
    REQUIRE(res);
    CHECK(res->body.find("annotate") != std::string::npos);
    server.stop();
    CHECK(store.record_count() == 1);
  }

  TEST_CASE("token files") {
    oracle::TempDir dir;
    {
      std::ofstream out(dir.path() / "tokens.json");
      out << R"({"ann1": "abc", "ann2": "def"})";
    }
    const auto t = read_tokens(dir.path() / "tokens.json");
    CHECK(t.at("ann2") == "def");
    {
      std::ofstream out(dir.path() / "bad.json");
      out << R"({"ann1": 5})";
    }
    CHECK_THROWS(read_tokens(dir.path() / "bad.json"));
  }
}
