#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sessionseg {

struct Item {
  std::string id;
  std::string title;
  std::string brand;  // empty when the catalog has no brand
  std::optional<double> price;
};

struct Session {
  std::string session_id;
  std::vector<std::string> items;

  std::size_t gap_count() const {
    return items.empty() ? 0 : items.size() - 1;
  }
};

// A session with one 0/1 label per inter-item gap (1 = segmentation point).
struct AnnotatedSession {
  Session session;
  std::vector<int> gap_labels;
  std::string annotator_id;
};

// Throws ValidationError unless gap_labels has |items| - 1 entries in {0,1}.
void validate(const AnnotatedSession& annotated);

class Catalog {
 public:
  // Throws ValidationError on an empty or duplicate id.
  void add(Item item);
  const Item* find(std::string_view id) const;
  // Throws NotFoundError naming the id.
  const Item& at(std::string_view id) const;
  std::size_t size() const { return items_.size(); }
  // Ids in insertion order.
  const std::vector<std::string>& ids() const { return order_; }

 private:
  std::unordered_map<std::string, Item> items_;
  std::vector<std::string> order_;
};

struct CatalogLoadReport {
  std::size_t rows = 0;
  std::size_t blank_brands = 0;
  // (row index, item id) for every blank or unparsable price.
  std::vector<std::pair<std::size_t, std::string>> absent_prices;
};

struct SessionLogRow {
  std::optional<std::string> session_id;
  std::string prev_items;  // list literal, e.g. ['A' 'B'] or ["A", "B"]
  std::string next_item;
};

struct CatalogRow {
  std::string id;
  std::string title;
  std::string brand;
  std::string price;
};

// Parses a list literal such as ["A", "B"], ['A' 'B'] or []. Elements must be
// quoted; separators are commas and/or whitespace.
std::vector<std::string> parse_item_list(std::string_view text);

// Session items are prev_items followed by next_item. Rows without a session
// id are named by their 0-based row index. Throws ParseError (with the row
// index) on malformed lists and ValidationError on duplicate session ids.
std::vector<Session> parse_session_log(std::span<const SessionLogRow> rows);

// CSV with a header naming at least prev_items and next_item; an optional
// session_id column is honored.
std::vector<Session> read_session_log(std::istream& in);
void write_session_log(std::ostream& out, std::span<const Session> sessions);

Catalog load_catalog(std::span<const CatalogRow> rows,
                     CatalogLoadReport* report = nullptr);
// CSV with a header naming id, title, brand and price (other columns are
// ignored, so product dumps with extra attributes load directly).
Catalog read_catalog(std::istream& in, CatalogLoadReport* report = nullptr);
void write_catalog(std::ostream& out, const Catalog& catalog);

struct CorpusStats {
  std::size_t total_sessions = 0;
  std::size_t total_items = 0;  // distinct item ids
  std::size_t total_events = 0; // sum of session lengths
  double mean_length = 0;
  double std_length = 0;  // population standard deviation
  std::size_t min_length = 0;
  std::size_t median_length = 0;  // lower middle for even counts
  std::size_t max_length = 0;
};

CorpusStats corpus_stats(std::span<const Session> sessions);

struct SplitRatio {
  unsigned train = 4;
  unsigned test = 1;
};

struct AnnotatedSplit {
  std::vector<AnnotatedSession> train;
  std::vector<AnnotatedSession> test;
};

// Whole-session split, deterministic in the seed. Both sides are non-empty.
AnnotatedSplit split_annotated(std::span<const AnnotatedSession> annotated,
                               SplitRatio ratio, std::uint64_t seed);

// Annotation files: JSON lines with a versioned header line.
std::vector<AnnotatedSession> read_annotations(std::istream& in);
void write_annotations(std::ostream& out,
                       std::span<const AnnotatedSession> annotated);

// Split manifest: "train<TAB>id" / "test<TAB>id" lines after a header.
void write_split_manifest(std::ostream& out, const AnnotatedSplit& split,
                          std::uint64_t seed);
struct SplitManifest {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};
SplitManifest read_split_manifest(std::istream& in);

}  // namespace sessionseg
