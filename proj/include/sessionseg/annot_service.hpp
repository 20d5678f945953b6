#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "sessionseg/corpus.hpp"

namespace sessionseg {

struct AnnotationRecord {
  std::uint64_t record_id = 0;
  std::string session_id;
  std::string annotator_id;
  std::vector<int> gap_labels;
  std::int64_t timestamp_ms = 0;
};

struct SessionPayload {
  std::string session_id;
  std::vector<Item> items;  // display fields only, in session order
  std::size_t gap_count = 0;

  nlohmann::ordered_json to_json() const;
};

enum class ExportPolicy { kFirstRecord, kMajority };
ExportPolicy parse_export_policy(std::string_view name);

inline constexpr std::size_t kLongSessionItems = 5;

struct AnnotatorProgress {
  std::string annotator_id;
  std::size_t sessions = 0;
  std::array<double, 4> fractions{};  // sessions with 0, 1, 2, 3+ boundaries
};

struct ProgressReport {
  std::size_t pool_sessions = 0;
  std::size_t labeled_sessions = 0;  // with at least one record
  std::size_t records = 0;
  std::vector<AnnotatorProgress> annotators;  // every registered annotator
  // Record counts by session length (long = at least 5 items) and bucket.
  std::array<std::size_t, 4> long_sessions{};
  std::array<std::size_t, 4> short_sessions{};

  nlohmann::ordered_json to_json() const;
};

struct StoreConfig {
  std::filesystem::path log_path;
  std::vector<std::string> annotators;
  std::int64_t reservation_ms = 10 * 60 * 1000;
  std::uint64_t seed = 1;
  std::function<std::int64_t()> now_ms;  // defaults to the system clock
};

// Append-only annotation store. Every accepted record is written as one JSON
// line and fsynced before submit() returns; the log is replayed on
// construction, dropping a torn final line.
class AnnotationStore {
 public:
  // Sessions without gaps are left out of the pool. Throws ValidationError on
  // a corrupt log or a record that does not match the pool.
  AnnotationStore(std::vector<Session> sessions, const Catalog& catalog, StoreConfig cfg);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  bool is_annotator(std::string_view annotator_id) const;

  // Next session in the seeded order that the annotator has not labeled and
  // nobody else holds an unexpired reservation on. Unlabeled sessions come
  // before sessions another annotator already labeled. Re-asking while a
  // reservation is live returns the same session. Throws AuthError for
  // unknown annotators.
  std::optional<SessionPayload> next_unlabeled(const std::string& annotator_id);

  // Throws AuthError, NotFoundError (unknown session), ValidationError (label
  // count or values) or ConflictError (second record for the same pair).
  AnnotationRecord submit(const std::string& session_id, const std::string& annotator_id,
                          std::span<const int> gap_labels);

  std::vector<AnnotationRecord> records() const;
  std::size_t record_count() const;
  std::size_t dropped_bytes() const { return dropped_bytes_; }

  // One AnnotatedSession per labeled session, in pool order. Majority voting
  // labels a gap 1 only when ones outnumber zeros. Throws NotFoundError when
  // there are no records.
  std::vector<AnnotatedSession> export_annotations(ExportPolicy policy) const;

  ProgressReport progress() const;

 private:
  struct Reservation {
    std::string annotator_id;
    std::int64_t expires_ms = 0;
  };

  void replay();
  void accept(AnnotationRecord record);
  std::int64_t now() const;
  SessionPayload payload(std::size_t index) const;

  StoreConfig cfg_;
  const Catalog& catalog_;
  std::vector<Session> pool_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> order_;
  std::vector<AnnotationRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> by_pair_;  // (session, annotator)
  std::vector<std::vector<std::size_t>> by_session_;
  std::unordered_map<std::size_t, Reservation> reservations_;
  std::uint64_t next_record_id_ = 1;
  std::size_t dropped_bytes_ = 0;
  int fd_ = -1;
  mutable std::shared_mutex mu_;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ApiRequest {
  std::string method;  // GET or POST
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;  // raw Authorization header
};

// Transport-independent request handling. Every /api route needs
// "Authorization: Bearer <token>"; routes naming an annotator need that
// annotator's token. Errors come back as {"error": ...} with 400, 401, 404
// or 409.
class AnnotationApi {
 public:
  // tokens: annotator id -> token
  AnnotationApi(AnnotationStore& store, std::map<std::string, std::string> tokens);

  ApiResponse handle(const ApiRequest& request) const;

 private:
  std::string authenticate(const ApiRequest& request) const;  // annotator id

  AnnotationStore& store_;
  std::map<std::string, std::string> tokens_;
};

// HTTP front end: the API routes plus an optional static directory at "/".
class AnnotationServer {
 public:
  AnnotationServer(const AnnotationApi& api, std::filesystem::path static_dir = {});
  ~AnnotationServer();

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// {"annotator": "token", ...}
std::map<std::string, std::string> read_tokens(const std::filesystem::path& path);

}  // namespace sessionseg
