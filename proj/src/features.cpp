#include "sessionseg/features.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "sessionseg/csv.hpp"

namespace sessionseg {

namespace {

constexpr std::string_view kDatasetMagic = "# sessionseg-features v1";

template <typename T>
double cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    throw ValidationError("cosine: length mismatch " + std::to_string(u.size()) +
                          " vs " + std::to_string(v.size()));
  }
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i], b = v[i];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0 || nv == 0) return 0.0;
  const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

void check_gap(const Session& session, std::size_t gap_index) {
  if (session.items.size() < 2) {
    throw ValidationError("session " + session.session_id +
                          " has fewer than 2 items, so no gaps");
  }
  if (gap_index > session.items.size() - 2) {
    throw ValidationError("gap " + std::to_string(gap_index) +
                          " out of range for session " + session.session_id);
  }
}

std::size_t parse_size(std::string_view s, std::size_t row) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(row, "bad integer '" + std::string(s) + "'");
  }
  return v;
}

double parse_real(std::string_view s, std::size_t row) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(row, "bad value '" + std::string(s) + "'");
  }
  return v;
}

// Parses "key=value" tokens following the magic.
int header_field(const std::string& header, std::string_view key) {
  std::istringstream in(header.substr(kDatasetMagic.size()));
  std::string tok;
  while (in >> tok) {
    if (tok.size() > key.size() && tok.compare(0, key.size(), key) == 0 &&
        tok[key.size()] == '=') {
      return static_cast<int>(parse_size(std::string_view(tok).substr(key.size() + 1), 0));
    }
  }
  throw ValidationError("dataset header lacks " + std::string(key));
}

}  // namespace

std::string_view to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::kBehavior: return "behavior";
    case SimilarityKind::kBrand: return "brand";
    case SimilarityKind::kTitle: return "title";
    case SimilarityKind::kPrice: return "price";
  }
  return "?";
}

void WindowConfig::validate() const {
  if (w < 1) throw ValidationError("window radius w must be >= 1");
}

std::vector<std::pair<int, int>> pair_index(int w) {
  WindowConfig{w}.validate();
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < 2 * w; ++a) {
    for (int b = a + 1; b < 2 * w; ++b) pairs.emplace_back(a, b);
  }
  return pairs;
}

std::size_t pair_count(int w) {
  WindowConfig{w}.validate();
  const auto n = static_cast<std::size_t>(2 * w);
  return n * (n - 1) / 2;
}

std::size_t feature_dim(int w) { return kSimilarityKinds * pair_count(w); }

std::string position_label(int position, int w) {
  if (position < 0 || position >= 2 * w) {
    throw ValidationError("window position out of range");
  }
  return position < w ? "L_" + std::to_string(w - position)
                      : "R_" + std::to_string(position - w + 1);
}

std::string feature_label(std::size_t feature_index, int w) {
  if (feature_index >= feature_dim(w)) {
    throw ValidationError("feature index out of range");
  }
  const auto pairs = pair_index(w);
  const auto [a, b] = pairs[feature_index / kSimilarityKinds];
  const auto kind = static_cast<SimilarityKind>(feature_index % kSimilarityKinds);
  return "(" + position_label(a, w) + "," + position_label(b, w) + "):" +
         std::string(to_string(kind));
}

std::vector<std::size_t> window_positions(const Session& session,
                                          std::size_t gap_index, int w) {
  WindowConfig{w}.validate();
  check_gap(session, gap_index);
  const auto last = static_cast<std::ptrdiff_t>(session.items.size()) - 1;
  const auto left = static_cast<std::ptrdiff_t>(gap_index);
  std::vector<std::size_t> out;
  out.reserve(2 * w);
  for (int k = w; k >= 1; --k) {
    out.push_back(static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, left - (k - 1))));
  }
  for (int k = 1; k <= w; ++k) {
    out.push_back(static_cast<std::size_t>(std::min<std::ptrdiff_t>(last, left + k)));
  }
  return out;
}

std::vector<std::string> window_items(const Session& session,
                                      std::size_t gap_index, int w) {
  std::vector<std::string> out;
  for (auto p : window_positions(session, gap_index, w)) {
    out.push_back(session.items[p]);
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  return cosine_impl(u, v);
}

double cosine(std::span<const float> u, std::span<const float> v) {
  return cosine_impl(u, v);
}

double price_similarity(double price_a, double price_b) {
  if (!(price_a >= 0) || !(price_b >= 0) || !std::isfinite(price_a) ||
      !std::isfinite(price_b)) {
    throw ValidationError("prices must be finite and non-negative");
  }
  return std::exp(-std::abs(price_a - price_b) / (std::min(price_a, price_b) + 1.0));
}

std::vector<double> build_feature_vector(const Session& session,
                                         std::size_t gap_index, int w,
                                         const FeatureContext& ctx) {
  if (!ctx.catalog || !ctx.behavior || !ctx.title || !ctx.brand) {
    throw ValidationError("feature context is incomplete");
  }
  const auto positions = window_positions(session, gap_index, w);
  std::vector<const Item*> items;
  std::vector<std::optional<std::span<const float>>> behavior;
  std::vector<const std::vector<double>*> titles, brands;
  for (auto p : positions) {
    const Item& item = ctx.catalog->at(session.items[p]);
    items.push_back(&item);
    behavior.push_back(ctx.behavior->lookup(item.id));
    titles.push_back(&ctx.title->embed_field(item, TextField::kTitle));
    brands.push_back(&ctx.brand->embed_field(item, TextField::kBrand));
  }

  auto successor_price = [&](std::size_t window_pos) -> std::optional<double> {
    const std::size_t next = std::min(positions[window_pos] + 1, session.items.size() - 1);
    return ctx.catalog->at(session.items[next]).price;
  };

  std::vector<double> out;
  out.reserve(feature_dim(w));
  for (const auto& [a, b] : pair_index(w)) {
    out.push_back(behavior[a] && behavior[b] ? cosine(*behavior[a], *behavior[b]) : 0.0);
    out.push_back(cosine(*brands[a], *brands[b]));
    out.push_back(cosine(*titles[a], *titles[b]));
    const auto& pa = items[a]->price;
    const auto& pb = items[b]->price;
    double price = 0.0;
    if (pa && pb) {
      if (ctx.price_mode == PriceMode::kSmoothedMin) {
        price = price_similarity(*pa, *pb);
      } else {
        const auto na = successor_price(a);
        const auto nb = successor_price(b);
        if (na && nb) {
          const double denom = std::min(*na, *nb);
          const double diff = std::abs(*pa - *pb);
          price = diff == 0 ? 1.0 : (denom > 0 ? std::exp(-diff / denom) : 0.0);
        }
      }
    }
    out.push_back(price);
  }
  return out;
}

std::size_t FeatureDataset::positives() const {
  std::size_t n = 0;
  for (int v : y) n += v == 1;
  return n;
}

FeatureDataset build_dataset(std::span<const AnnotatedSession> annotated,
                             int w, const FeatureContext& ctx) {
  WindowConfig{w}.validate();
  FeatureDataset data;
  data.w = w;
  data.x = Matrix(0, feature_dim(w));
  for (const auto& a : annotated) {
    validate(a);
    const auto& s = a.session;
    if (s.items.size() < 2) {
      ++data.skipped_sessions;
      continue;
    }
    for (std::size_t g = 0; g + 1 < s.items.size(); ++g) {
      std::vector<double> row;
      try {
        row = build_feature_vector(s, g, w, ctx);
      } catch (const NotFoundError& e) {
        throw NotFoundError("session " + s.session_id + " gap " +
                            std::to_string(g) + ": " + e.what());
      } catch (const Error& e) {
        throw ValidationError("session " + s.session_id + " gap " +
                              std::to_string(g) + ": " + e.what());
      }
      data.x.append_row(row);
      data.y.push_back(a.gap_labels[g]);
      data.groups.push_back(s.session_id);
      data.gap_index.push_back(g);
    }
  }
  return data;
}

FeatureDataset subset_by_groups(const FeatureDataset& data,
                                std::span<const std::string> ids) {
  std::unordered_set<std::string_view> keep(ids.begin(), ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < data.groups.size(); ++r) {
    if (keep.count(data.groups[r])) rows.push_back(r);
  }
  FeatureDataset out;
  out.w = data.w;
  out.layout_version = data.layout_version;
  out.x = data.x.select_rows(rows);
  for (auto r : rows) {
    out.y.push_back(data.y[r]);
    out.groups.push_back(data.groups[r]);
    out.gap_index.push_back(data.gap_index[r]);
  }
  return out;
}

void write_dataset(std::ostream& out, const FeatureDataset& data) {
  const std::size_t cols = feature_dim(data.w);
  if (data.x.rows() > 0 && data.x.cols() != cols) {
    throw ValidationError("dataset width does not match w");
  }
  out << kDatasetMagic << " w=" << data.w << " d=" << pair_count(data.w)
      << " layout=" << data.layout_version << " cols=" << cols << '\n';
  out << "session_id,gap_index,label";
  for (std::size_t c = 0; c < cols; ++c) out << ",f" << c;
  out << '\n';
  for (std::size_t r = 0; r < data.x.rows(); ++r) {
    out << csv::escape(data.groups[r]) << ',' << data.gap_index[r] << ','
        << data.y[r];
    for (double v : data.x.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
}

FeatureDataset read_dataset(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind(kDatasetMagic, 0) != 0) {
    throw ValidationError("not a feature dataset file");
  }
  FeatureDataset data;
  data.w = header_field(header, "w");
  data.layout_version = header_field(header, "layout");
  if (data.layout_version != kFeatureLayoutVersion) {
    throw ValidationError("feature layout version " +
                          std::to_string(data.layout_version) +
                          " is not supported (expected " +
                          std::to_string(kFeatureLayoutVersion) + ")");
  }
  const auto cols = static_cast<std::size_t>(header_field(header, "cols"));
  if (cols != feature_dim(data.w) ||
      static_cast<std::size_t>(header_field(header, "d")) != pair_count(data.w)) {
    throw ValidationError("dataset header is inconsistent with w");
  }
  data.x = Matrix(0, cols);
  csv::Reader reader(in);
  if (!reader.next()) throw ValidationError("dataset lacks column header");
  std::vector<double> row(cols);
  while (auto rec = reader.next()) {
    const std::size_t r = data.y.size();
    if (rec->size() != cols + 3) {
      throw ParseError(r, "expected " + std::to_string(cols + 3) + " fields, got " +
                              std::to_string(rec->size()));
    }
    data.groups.push_back((*rec)[0]);
    data.gap_index.push_back(parse_size((*rec)[1], r));
    const auto label = parse_size((*rec)[2], r);
    if (label > 1) throw ParseError(r, "label must be 0 or 1");
    data.y.push_back(static_cast<int>(label));
    for (std::size_t c = 0; c < cols; ++c) row[c] = parse_real((*rec)[c + 3], r);
    data.x.append_row(row);
  }
  return data;
}

void write_dataset(const std::filesystem::path& path, const FeatureDataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset(out, data);
}

FeatureDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace sessionseg
