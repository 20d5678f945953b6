#include "sessionseg/annot_service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "sessionseg/common.hpp"

namespace sessionseg {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kLogFormat = "sessionseg-annotation-log";
constexpr int kLogVersion = 1;

std::size_t bucket(std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return std::min<std::size_t>(n, 3);
}

std::string record_line(const AnnotationRecord& r) {
  ordered_json j = {{"record_id", r.record_id},
                    {"session_id", r.session_id},
                    {"annotator_id", r.annotator_id},
                    {"gap_labels", r.gap_labels},
                    {"timestamp_ms", r.timestamp_ms}};
  return j.dump() + '\n';
}

void write_all(int fd, const std::string& data) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("annotation log write failed: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    throw Error(std::string("annotation log fsync failed: ") + std::strerror(errno));
  }
}

ordered_json error_json(const std::string& message) { return {{"error", message}}; }

ApiResponse json_response(int status, const ordered_json& j) {
  return {status, "application/json", j.dump()};
}

}  // namespace

nlohmann::ordered_json SessionPayload::to_json() const {
  ordered_json items_j = ordered_json::array();
  for (const auto& item : items) {
    ordered_json i = {{"id", item.id}, {"title", item.title}, {"brand", item.brand}};
    i["price"] = item.price ? ordered_json(*item.price) : ordered_json(nullptr);
    items_j.push_back(std::move(i));
  }
  return {{"session_id", session_id}, {"gap_count", gap_count}, {"items", items_j}};
}

ExportPolicy parse_export_policy(std::string_view name) {
  if (name == "first-record") return ExportPolicy::kFirstRecord;
  if (name == "majority") return ExportPolicy::kMajority;
  throw ValidationError("unknown export policy '" + std::string(name) + "'");
}

nlohmann::ordered_json ProgressReport::to_json() const {
  ordered_json per = ordered_json::array();
  for (const auto& a : annotators) {
    per.push_back({{"annotator_id", a.annotator_id},
                   {"sessions", a.sessions},
                   {"fractions",
                    {{"0", a.fractions[0]},
                     {"1", a.fractions[1]},
                     {"2", a.fractions[2]},
                     {"3+", a.fractions[3]}}}});
  }
  const auto counts = [](const std::array<std::size_t, 4>& c) {
    return ordered_json{{"0", c[0]}, {"1", c[1]}, {"2", c[2]}, {"3+", c[3]}};
  };
  return {{"pool_sessions", pool_sessions},
          {"labeled_sessions", labeled_sessions},
          {"records", records},
          {"annotators", per},
          {"by_length",
           {{"long_min_items", kLongSessionItems},
            {"long", counts(long_sessions)},
            {"short", counts(short_sessions)}}}};
}

AnnotationStore::AnnotationStore(std::vector<Session> sessions, const Catalog& catalog,
                                 StoreConfig cfg)
    : cfg_(std::move(cfg)), catalog_(catalog) {
  if (cfg_.log_path.empty()) throw ValidationError("annotation store needs a log path");
  if (cfg_.reservation_ms < 0) throw ValidationError("reservation timeout must be >= 0");
  for (auto& s : sessions) {
    if (s.gap_count() == 0) continue;
    for (const auto& id : s.items) catalog_.at(id);
    if (!index_.emplace(s.session_id, pool_.size()).second) {
      throw ValidationError("duplicate session id '" + s.session_id + "' in pool");
    }
    pool_.push_back(std::move(s));
  }
  by_session_.resize(pool_.size());
  order_.resize(pool_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(cfg_.seed);
  rng.shuffle(order_);
  try {
    replay();
  } catch (...) {
    if (fd_ >= 0) ::close(fd_);
    throw;
  }
}

AnnotationStore::~AnnotationStore() {
  if (fd_ >= 0) ::close(fd_);
}

std::int64_t AnnotationStore::now() const {
  if (cfg_.now_ms) return cfg_.now_ms();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void AnnotationStore::replay() {
  const fs::path& path = cfg_.log_path;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::string content;
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  const std::size_t complete = content.empty() ? 0 : content.rfind('\n') + 1;
  if (complete < content.size()) {
    dropped_bytes_ = content.size() - complete;
    content.resize(complete);
    fs::resize_file(path, complete);
  }

  fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));

  if (content.empty()) {
    const ordered_json header = {{"format", kLogFormat}, {"version", kLogVersion}};
    write_all(fd_, header.dump() + '\n');
    return;
  }

  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": corrupt record: " + e.what());
    }
    try {
      if (line_no == 1) {
        if (j.value("format", "") != kLogFormat || j.value("version", 0) != kLogVersion) {
          throw ValidationError("not a version 1 annotation log");
        }
        continue;
      }
      AnnotationRecord r;
      r.record_id = j.at("record_id").get<std::uint64_t>();
      r.session_id = j.at("session_id").get<std::string>();
      r.annotator_id = j.at("annotator_id").get<std::string>();
      r.gap_labels = j.at("gap_labels").get<std::vector<int>>();
      r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
      accept(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void AnnotationStore::accept(AnnotationRecord r) {
  const auto it = index_.find(r.session_id);
  if (it == index_.end()) throw NotFoundError("unknown session '" + r.session_id + "'");
  const Session& s = pool_[it->second];
  if (r.gap_labels.size() != s.gap_count()) {
    throw ValidationError("session " + r.session_id + " has " +
                          std::to_string(s.gap_count()) + " gaps, got " +
                          std::to_string(r.gap_labels.size()) + " labels");
  }
  for (int v : r.gap_labels) {
    if (v != 0 && v != 1) throw ValidationError("gap labels must be 0 or 1");
  }
  const auto key = std::make_pair(r.session_id, r.annotator_id);
  if (by_pair_.contains(key)) {
    throw ConflictError("annotator " + r.annotator_id + " already labeled session " +
                        r.session_id);
  }
  by_pair_.emplace(key, records_.size());
  by_session_[it->second].push_back(records_.size());
  next_record_id_ = std::max(next_record_id_, r.record_id + 1);
  records_.push_back(std::move(r));
}

bool AnnotationStore::is_annotator(std::string_view annotator_id) const {
  return std::find(cfg_.annotators.begin(), cfg_.annotators.end(), annotator_id) !=
         cfg_.annotators.end();
}

SessionPayload AnnotationStore::payload(std::size_t index) const {
  const Session& s = pool_[index];
  SessionPayload p;
  p.session_id = s.session_id;
  p.gap_count = s.gap_count();
  for (const auto& id : s.items) p.items.push_back(catalog_.at(id));
  return p;
}

std::optional<SessionPayload> AnnotationStore::next_unlabeled(
    const std::string& annotator_id) {
  if (!is_annotator(annotator_id)) throw AuthError("unknown annotator '" + annotator_id + "'");
  std::unique_lock lock(mu_);
  const std::int64_t t = now();
  const auto labeled_by_me = [&](std::size_t i) {
    return by_pair_.contains({pool_[i].session_id, annotator_id});
  };
  const auto held_by_other = [&](std::size_t i) {
    const auto it = reservations_.find(i);
    return it != reservations_.end() && it->second.annotator_id != annotator_id &&
           it->second.expires_ms > t;
  };
  for (const auto& [i, r] : reservations_) {
    if (r.annotator_id == annotator_id && r.expires_ms > t && !labeled_by_me(i)) {
      return payload(i);
    }
  }
  for (const bool allow_labeled : {false, true}) {
    for (std::size_t i : order_) {
      if (by_session_[i].empty() == allow_labeled) continue;
      if (labeled_by_me(i) || held_by_other(i)) continue;
      reservations_[i] = {annotator_id, t + cfg_.reservation_ms};
      return payload(i);
    }
  }
  return std::nullopt;
}

AnnotationRecord AnnotationStore::submit(const std::string& session_id,
                                         const std::string& annotator_id,
                                         std::span<const int> gap_labels) {
  if (!is_annotator(annotator_id)) throw AuthError("unknown annotator '" + annotator_id + "'");
  std::unique_lock lock(mu_);
  AnnotationRecord r;
  r.record_id = next_record_id_;
  r.session_id = session_id;
  r.annotator_id = annotator_id;
  r.gap_labels.assign(gap_labels.begin(), gap_labels.end());
  r.timestamp_ms = now();

  // Dry-run the checks before touching the log.
  const auto it = index_.find(session_id);
  if (it == index_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  if (by_pair_.contains({session_id, annotator_id})) {
    throw ConflictError("annotator " + annotator_id + " already labeled session " +
                        session_id);
  }
  if (r.gap_labels.size() != pool_[it->second].gap_count()) {
    throw ValidationError("session " + session_id + " has " +
                          std::to_string(pool_[it->second].gap_count()) + " gaps, got " +
                          std::to_string(r.gap_labels.size()) + " labels");
  }
  for (int v : r.gap_labels) {
    if (v != 0 && v != 1) throw ValidationError("gap labels must be 0 or 1");
  }

  write_all(fd_, record_line(r));
  accept(r);
  const auto res = reservations_.find(it->second);
  if (res != reservations_.end() && res->second.annotator_id == annotator_id) {
    reservations_.erase(res);
  }
  return r;
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

std::size_t AnnotationStore::record_count() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::vector<AnnotatedSession> AnnotationStore::export_annotations(ExportPolicy policy) const {
  std::shared_lock lock(mu_);
  if (records_.empty()) throw NotFoundError("no annotation records to export");
  std::vector<AnnotatedSession> out;
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    const auto& recs = by_session_[i];
    if (recs.empty()) continue;
    AnnotatedSession a;
    a.session = pool_[i];
    if (policy == ExportPolicy::kFirstRecord || recs.size() == 1) {
      const auto first = *std::min_element(recs.begin(), recs.end(), [&](auto x, auto y) {
        return records_[x].record_id < records_[y].record_id;
      });
      a.gap_labels = records_[first].gap_labels;
      a.annotator_id = records_[first].annotator_id;
    } else {
      std::vector<int> ones(a.session.gap_count(), 0);
      for (std::size_t r : recs) {
        for (std::size_t g = 0; g < ones.size(); ++g) ones[g] += records_[r].gap_labels[g];
      }
      const int n = static_cast<int>(recs.size());
      a.gap_labels.resize(ones.size());
      for (std::size_t g = 0; g < ones.size(); ++g) a.gap_labels[g] = 2 * ones[g] > n;
      a.annotator_id = "majority-of-" + std::to_string(n);
    }
    out.push_back(std::move(a));
  }
  return out;
}

ProgressReport AnnotationStore::progress() const {
  std::shared_lock lock(mu_);
  ProgressReport p;
  p.pool_sessions = pool_.size();
  p.records = records_.size();
  for (const auto& recs : by_session_) p.labeled_sessions += !recs.empty();

  std::vector<std::string> names = cfg_.annotators;
  for (const auto& r : records_) {
    if (std::find(names.begin(), names.end(), r.annotator_id) == names.end()) {
      names.push_back(r.annotator_id);
    }
  }
  std::map<std::string, std::array<std::size_t, 4>> counts;
  for (const auto& r : records_) {
    const std::size_t b = bucket(r.gap_labels);
    ++counts[r.annotator_id][b];
    const Session& s = pool_[index_.at(r.session_id)];
    ++(s.items.size() >= kLongSessionItems ? p.long_sessions : p.short_sessions)[b];
  }
  for (const auto& name : names) {
    AnnotatorProgress a;
    a.annotator_id = name;
    const auto it = counts.find(name);
    if (it != counts.end()) {
      for (std::size_t c : it->second) a.sessions += c;
      for (std::size_t b = 0; b < 4; ++b) {
        a.fractions[b] = static_cast<double>(it->second[b]) / static_cast<double>(a.sessions);
      }
    }
    p.annotators.push_back(std::move(a));
  }
  return p;
}

AnnotationApi::AnnotationApi(AnnotationStore& store,
                             std::map<std::string, std::string> tokens)
    : store_(store), tokens_(std::move(tokens)) {
  for (const auto& [annotator, token] : tokens_) {
    if (token.empty()) throw ValidationError("annotator " + annotator + " has an empty token");
  }
}

std::string AnnotationApi::authenticate(const ApiRequest& request) const {
  constexpr std::string_view kPrefix = "Bearer ";
  const std::string& h = request.authorization;
  if (h.size() <= kPrefix.size() || h.compare(0, kPrefix.size(), kPrefix) != 0) {
    throw AuthError("missing bearer token");
  }
  const std::string token = h.substr(kPrefix.size());
  for (const auto& [annotator, expected] : tokens_) {
    if (expected == token) return annotator;
  }
  throw AuthError("invalid token");
}

ApiResponse AnnotationApi::handle(const ApiRequest& req) const {
  try {
    const std::string who = authenticate(req);
    const auto query = [&](const std::string& key) -> std::string {
      const auto it = req.query.find(key);
      return it == req.query.end() ? std::string() : it->second;
    };

    if (req.method == "GET" && req.path == "/api/session/next") {
      const std::string annotator = query("annotator");
      if (annotator.empty()) throw ValidationError("annotator query parameter is required");
      if (annotator != who) throw AuthError("token does not belong to " + annotator);
      const auto next = store_.next_unlabeled(annotator);
      ordered_json j = {{"session", next ? next->to_json() : ordered_json(nullptr)}};
      return json_response(200, j);
    }

    constexpr std::string_view kSessionPrefix = "/api/session/";
    constexpr std::string_view kLabelsSuffix = "/labels";
    if (req.method == "POST" && req.path.starts_with(kSessionPrefix) &&
        req.path.ends_with(kLabelsSuffix) &&
        req.path.size() > kSessionPrefix.size() + kLabelsSuffix.size()) {
      const std::string session_id = req.path.substr(
          kSessionPrefix.size(), req.path.size() - kSessionPrefix.size() - kLabelsSuffix.size());
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        throw ValidationError("request body is not valid JSON");
      }
      if (!body.is_object()) throw ValidationError("request body must be an object");
      std::string annotator = who;
      if (body.contains("annotator")) {
        if (!body["annotator"].is_string()) throw ValidationError("annotator must be a string");
        annotator = body["annotator"].get<std::string>();
        if (annotator != who) throw AuthError("token does not belong to " + annotator);
      }
      const auto& labels_j = body.contains("gap_labels") ? body["gap_labels"] : json();
      if (!labels_j.is_array()) throw ValidationError("gap_labels must be an array");
      std::vector<int> labels;
      for (const auto& v : labels_j) {
        if (!v.is_number_integer()) throw ValidationError("gap labels must be 0 or 1");
        labels.push_back(v.get<int>());
      }
      const auto rec = store_.submit(session_id, annotator, labels);
      return json_response(200, {{"record_id", rec.record_id},
                                 {"session_id", rec.session_id},
                                 {"annotator_id", rec.annotator_id}});
    }

    if (req.method == "GET" && req.path == "/api/progress") {
      return json_response(200, store_.progress().to_json());
    }

    if (req.method == "GET" && req.path == "/api/export") {
      const std::string policy = query("policy");
      const auto exported =
          store_.export_annotations(parse_export_policy(policy.empty() ? "first-record" : policy));
      std::ostringstream out;
      write_annotations(out, exported);
      return {200, "application/x-ndjson", out.str()};
    }

    throw NotFoundError("no route for " + req.method + " " + req.path);
  } catch (const AuthError& e) {
    return json_response(401, error_json(e.what()));
  } catch (const NotFoundError& e) {
    return json_response(404, error_json(e.what()));
  } catch (const ConflictError& e) {
    return json_response(409, error_json(e.what()));
  } catch (const Error& e) {
    return json_response(400, error_json(e.what()));
  }
}

struct AnnotationServer::Impl {
  httplib::Server server;
  std::thread thread;
};

AnnotationServer::AnnotationServer(const AnnotationApi& api, fs::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  const auto forward = [&api](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    r.body = req.body;
    r.authorization = req.get_header_value("Authorization");
    const ApiResponse out = api.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(R"(/api/.*)", forward);
  impl_->server.Post(R"(/api/.*)", forward);
  if (!static_dir.empty() && !impl_->server.set_mount_point("/", static_dir.string())) {
    throw NotFoundError("static directory " + static_dir.string() + " does not exist");
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error("cannot serve on " + host + ":" + std::to_string(port));
  }
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::map<std::string, std::string> read_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    auto tokens = j.get<std::map<std::string, std::string>>();
    if (tokens.empty()) throw ValidationError("token file lists no annotators");
    return tokens;
  } catch (const json::exception& e) {
    throw ValidationError("token file " + path.string() + ": " + e.what());
  }
}

}  // namespace sessionseg
