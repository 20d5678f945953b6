#include "sessionseg/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "sessionseg/common.hpp"
#include "sessionseg/csv.hpp"

namespace sessionseg {

namespace {

constexpr const char* kAnnotationsFormat = "sessionseg-annotations";
constexpr int kAnnotationsVersion = 1;
constexpr const char* kSplitHeader = "# sessionseg-split v1";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_price(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  if (!std::isfinite(value) || value < 0) return std::nullopt;
  return value;
}

std::map<std::string, std::size_t> header_index(const csv::Record& header) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    index[std::string(trim(header[i]))] = i;
  }
  return index;
}

std::size_t require_column(const std::map<std::string, std::size_t>& index,
                           const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) {
    throw ValidationError("missing column '" + name + "' in header");
  }
  return it->second;
}

const std::string& field(const csv::Record& rec, std::size_t col,
                         std::size_t row) {
  if (col >= rec.size()) {
    throw ParseError(row, "expected at least " + std::to_string(col + 1) +
                              " fields, got " + std::to_string(rec.size()));
  }
  return rec[col];
}

}  // namespace

void validate(const AnnotatedSession& annotated) {
  const auto& s = annotated.session;
  if (s.items.empty()) {
    throw ValidationError("session " + s.session_id + " has no items");
  }
  if (annotated.gap_labels.size() != s.items.size() - 1) {
    throw ValidationError(
        "session " + s.session_id + ": expected " +
        std::to_string(s.items.size() - 1) + " gap labels, got " +
        std::to_string(annotated.gap_labels.size()));
  }
  for (int label : annotated.gap_labels) {
    if (label != 0 && label != 1) {
      throw ValidationError("session " + s.session_id +
                            ": gap labels must be 0 or 1");
    }
  }
}

void Catalog::add(Item item) {
  if (item.id.empty()) throw ValidationError("catalog item with empty id");
  if (item.price && *item.price < 0) {
    throw ValidationError("item " + item.id + " has a negative price");
  }
  const std::string id = item.id;
  auto [it, inserted] = items_.emplace(id, std::move(item));
  if (!inserted) throw ValidationError("duplicate catalog id: " + id);
  order_.push_back(id);
}

const Item* Catalog::find(std::string_view id) const {
  auto it = items_.find(std::string(id));
  return it == items_.end() ? nullptr : &it->second;
}

const Item& Catalog::at(std::string_view id) const {
  const Item* item = find(id);
  if (!item) throw NotFoundError("unknown item id: " + std::string(id));
  return *item;
}

std::vector<std::string> parse_item_list(std::string_view text) {
  text = trim(text);
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    throw ValidationError("list must be enclosed in [ ]");
  }
  std::vector<std::string> items;
  std::size_t i = 1;
  const std::size_t end = text.size() - 1;
  bool need_separator = false;
  while (i < end) {
    const char c = text[i];
    if (is_space(c)) {
      need_separator = false;
      ++i;
      continue;
    }
    if (c == ',') {
      if (items.empty() || !need_separator) {
        throw ValidationError("unexpected ',' at offset " + std::to_string(i));
      }
      need_separator = false;
      ++i;
      continue;
    }
    if (c != '\'' && c != '"') {
      throw ValidationError("expected quoted item at offset " +
                            std::to_string(i));
    }
    if (need_separator) {
      throw ValidationError("missing separator at offset " + std::to_string(i));
    }
    const std::size_t close = text.find(c, i + 1);
    if (close == std::string_view::npos || close >= end) {
      throw ValidationError("unterminated item at offset " + std::to_string(i));
    }
    std::string id(text.substr(i + 1, close - i - 1));
    if (id.empty()) throw ValidationError("empty item id in list");
    items.push_back(std::move(id));
    need_separator = true;
    i = close + 1;
  }
  return items;
}

std::vector<Session> parse_session_log(std::span<const SessionLogRow> rows) {
  std::vector<Session> sessions;
  sessions.reserve(rows.size());
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    Session s;
    s.session_id = row.session_id ? *row.session_id : std::to_string(r);
    if (s.session_id.empty()) throw ParseError(r, "empty session id");
    try {
      s.items = parse_item_list(row.prev_items);
    } catch (const ValidationError& e) {
      throw ParseError(r, std::string("prev_items: ") + e.what());
    }
    const auto next = trim(row.next_item);
    if (next.empty()) throw ParseError(r, "empty next_item");
    s.items.emplace_back(next);
    if (!seen.insert(s.session_id).second) {
      throw ValidationError("duplicate session id: " + s.session_id);
    }
    sessions.push_back(std::move(s));
  }
  return sessions;
}

std::vector<Session> read_session_log(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw ValidationError("session log is empty");
  const auto index = header_index(*header);
  const std::size_t prev_col = require_column(index, "prev_items");
  const std::size_t next_col = require_column(index, "next_item");
  const auto sid_it = index.find("session_id");
  std::vector<SessionLogRow> rows;
  while (auto rec = reader.next()) {
    const std::size_t row = rows.size();
    if (rec->size() == 1 && trim((*rec)[0]).empty()) continue;
    SessionLogRow r;
    if (sid_it != index.end()) {
      r.session_id = field(*rec, sid_it->second, row);
    }
    r.prev_items = field(*rec, prev_col, row);
    r.next_item = field(*rec, next_col, row);
    rows.push_back(std::move(r));
  }
  return parse_session_log(rows);
}

void write_session_log(std::ostream& out, std::span<const Session> sessions) {
  out << "session_id,prev_items,next_item\n";
  for (const auto& s : sessions) {
    if (s.items.empty()) {
      throw ValidationError("cannot write empty session " + s.session_id);
    }
    nlohmann::json prev = nlohmann::json::array();
    for (std::size_t i = 0; i + 1 < s.items.size(); ++i) prev.push_back(s.items[i]);
    out << csv::join({s.session_id, prev.dump(), s.items.back()}) << '\n';
  }
}

Catalog load_catalog(std::span<const CatalogRow> rows,
                     CatalogLoadReport* report) {
  Catalog catalog;
  CatalogLoadReport local;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    Item item;
    item.id = std::string(trim(row.id));
    if (item.id.empty()) throw ParseError(r, "missing item id");
    item.title = row.title;
    item.brand = std::string(trim(row.brand));
    if (item.brand.empty()) ++local.blank_brands;
    item.price = parse_price(row.price);
    if (!item.price) local.absent_prices.emplace_back(r, item.id);
    catalog.add(std::move(item));
  }
  local.rows = rows.size();
  if (report) *report = std::move(local);
  return catalog;
}

Catalog read_catalog(std::istream& in, CatalogLoadReport* report) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw ValidationError("catalog is empty");
  const auto index = header_index(*header);
  const std::size_t id_col = require_column(index, "id");
  const std::size_t title_col = require_column(index, "title");
  const std::size_t brand_col = require_column(index, "brand");
  const std::size_t price_col = require_column(index, "price");
  std::vector<CatalogRow> rows;
  while (auto rec = reader.next()) {
    if (rec->size() == 1 && trim((*rec)[0]).empty()) continue;
    const std::size_t row = rows.size();
    rows.push_back({field(*rec, id_col, row), field(*rec, title_col, row),
                    field(*rec, brand_col, row), field(*rec, price_col, row)});
  }
  return load_catalog(rows, report);
}

void write_catalog(std::ostream& out, const Catalog& catalog) {
  out << "id,title,brand,price\n";
  for (const auto& id : catalog.ids()) {
    const Item& item = catalog.at(id);
    out << csv::join({item.id, item.title, item.brand,
                      item.price ? format_double(*item.price) : ""})
        << '\n';
  }
}

CorpusStats corpus_stats(std::span<const Session> sessions) {
  if (sessions.empty()) throw ValidationError("corpus_stats: no sessions");
  CorpusStats st;
  st.total_sessions = sessions.size();
  std::vector<std::size_t> lengths;
  lengths.reserve(sessions.size());
  std::unordered_set<std::string_view> distinct;
  for (const auto& s : sessions) {
    lengths.push_back(s.items.size());
    for (const auto& id : s.items) distinct.insert(id);
  }
  st.total_items = distinct.size();
  std::uint64_t sum = 0;
  for (auto len : lengths) sum += len;
  st.total_events = sum;
  const double n = static_cast<double>(lengths.size());
  st.mean_length = static_cast<double>(sum) / n;
  // Integer sum of squared deviations scaled by n keeps the variance exact
  // until the final division.
  long double sq = 0;
  for (auto len : lengths) {
    const long double dev = static_cast<long double>(len) * n - sum;
    sq += dev * dev;
  }
  st.std_length = static_cast<double>(std::sqrt(sq / n) / n);
  std::sort(lengths.begin(), lengths.end());
  st.min_length = lengths.front();
  st.max_length = lengths.back();
  st.median_length = lengths[(lengths.size() - 1) / 2];
  return st;
}

AnnotatedSplit split_annotated(std::span<const AnnotatedSession> annotated,
                               SplitRatio ratio, std::uint64_t seed) {
  if (ratio.train == 0 || ratio.test == 0) {
    throw ValidationError("split ratio parts must be positive");
  }
  if (annotated.size() < 2) {
    throw ValidationError("need at least 2 sessions to split");
  }
  std::unordered_set<std::string_view> ids;
  for (const auto& a : annotated) {
    if (!ids.insert(a.session.session_id).second) {
      throw ValidationError("duplicate session id in split input: " +
                            a.session.session_id);
    }
  }
  const std::size_t n = annotated.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const double share =
      static_cast<double>(ratio.train) / (ratio.train + ratio.test);
  auto n_train = static_cast<std::size_t>(std::llround(share * n));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  // Restore input order within each side so output is stable to read.
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> test_idx(order.begin() + n_train, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  AnnotatedSplit split;
  for (auto i : train_idx) split.train.push_back(annotated[i]);
  for (auto i : test_idx) split.test.push_back(annotated[i]);
  return split;
}

std::vector<AnnotatedSession> read_annotations(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw ValidationError("annotation file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(row, std::string("bad annotation header: ") + e.what());
  }
  if (header.value("format", "") != kAnnotationsFormat ||
      header.value("version", 0) != kAnnotationsVersion) {
    throw ValidationError("unsupported annotation file header: " + line);
  }
  std::vector<AnnotatedSession> out;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    AnnotatedSession a;
    try {
      const auto rec = nlohmann::json::parse(line);
      a.session.session_id = rec.at("session_id").get<std::string>();
      a.session.items = rec.at("items").get<std::vector<std::string>>();
      a.gap_labels = rec.at("gap_labels").get<std::vector<int>>();
      a.annotator_id = rec.value("annotator_id", "");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(row, e.what());
    }
    try {
      validate(a);
    } catch (const ValidationError& e) {
      throw ParseError(row, e.what());
    }
    if (!seen.insert(a.session.session_id).second) {
      throw ParseError(row, "duplicate session id " + a.session.session_id);
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(std::ostream& out,
                       std::span<const AnnotatedSession> annotated) {
  nlohmann::json header = {{"format", kAnnotationsFormat},
                           {"version", kAnnotationsVersion}};
  out << header.dump() << '\n';
  for (const auto& a : annotated) {
    validate(a);
    nlohmann::json rec = {{"session_id", a.session.session_id},
                          {"annotator_id", a.annotator_id},
                          {"items", a.session.items},
                          {"gap_labels", a.gap_labels}};
    out << rec.dump() << '\n';
  }
}

void write_split_manifest(std::ostream& out, const AnnotatedSplit& split,
                          std::uint64_t seed) {
  out << kSplitHeader << " seed=" << seed << '\n';
  for (const auto& a : split.train) out << "train\t" << a.session.session_id << '\n';
  for (const auto& a : split.test) out << "test\t" << a.session.session_id << '\n';
}

SplitManifest read_split_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(kSplitHeader, 0) != 0) {
    throw ValidationError("not a split manifest");
  }
  SplitManifest m;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(row, "expected side<TAB>id");
    const auto side = line.substr(0, tab);
    auto id = line.substr(tab + 1);
    if (side == "train") {
      m.train_ids.push_back(std::move(id));
    } else if (side == "test") {
      m.test_ids.push_back(std::move(id));
    } else {
      throw ParseError(row, "unknown split side '" + side + "'");
    }
  }
  return m;
}

}  // namespace sessionseg
