#include "sessionseg/text_embed.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sessionseg/common.hpp"

namespace sessionseg {

namespace {

constexpr std::string_view kTextVecHeader = "# sessionseg-textvec v1 dim=";

// Splits UTF-8 into code points (as byte strings). Invalid bytes are kept as
// single-byte units.
std::vector<std::string> code_points(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xf0) {
      len = 4;
    } else if (c >= 0xe0) {
      len = 3;
    } else if (c >= 0xc0) {
      len = 2;
    }
    if (i + len > text.size()) len = 1;
    std::string cp(text.substr(i, len));
    if (len == 1 && c < 0x80) {
      cp[0] = static_cast<char>(std::tolower(c));
    }
    out.push_back(std::move(cp));
    i += len;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && blank(s.front())) s.remove_prefix(1);
  while (!s.empty() && blank(s.back())) s.remove_suffix(1);
  return s;
}

std::string_view field_text(const Item& item, TextField field) {
  return field == TextField::kTitle ? item.title : item.brand;
}

}  // namespace

std::string_view to_string(TextField field) {
  return field == TextField::kTitle ? "title" : "brand";
}

TextField parse_text_field(std::string_view name) {
  if (name == "title") return TextField::kTitle;
  if (name == "brand") return TextField::kBrand;
  throw ValidationError("unknown text field '" + std::string(name) + "'");
}

std::vector<double> hashed_ngram_embed(std::string_view text, std::size_t dim,
                                       std::uint64_t seed) {
  if (dim == 0) throw ValidationError("text embedding dim must be >= 1");
  std::vector<double> v(dim, 0.0);
  text = trim(text);
  if (text.empty()) return v;
  std::vector<std::string> units{"\x02"};
  for (auto& cp : code_points(text)) units.push_back(std::move(cp));
  units.emplace_back("\x03");
  const std::uint64_t basis = derive_seed(seed, 0x7e57);
  for (std::size_t n = 2; n <= 3; ++n) {
    for (std::size_t i = 0; i + n <= units.size(); ++i) {
      std::string gram;
      for (std::size_t k = 0; k < n; ++k) gram += units[i + k];
      const std::uint64_t h = fnv1a64(gram, basis ^ n);
      const std::uint64_t mixed = derive_seed(h, n);
      v[h % dim] += (mixed & 1) ? 1.0 : -1.0;
    }
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

HashedNgramProvider::HashedNgramProvider(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim == 0) throw ValidationError("text embedding dim must be >= 1");
}

std::vector<double> HashedNgramProvider::embed(std::string_view, TextField,
                                               std::string_view text) const {
  return hashed_ngram_embed(text, dim_, seed_);
}

PrecomputedProvider::PrecomputedProvider(
    std::size_t dim, std::unordered_map<std::string, std::vector<double>> vectors,
    std::shared_ptr<const TextEmbeddingProvider> fallback)
    : dim_(dim), vectors_(std::move(vectors)), fallback_(std::move(fallback)) {
  if (dim_ == 0) throw ValidationError("text embedding dim must be >= 1");
  if (!fallback_) fallback_ = std::make_shared<HashedNgramProvider>(dim_);
  if (fallback_->dim() != dim_) {
    throw ValidationError("fallback provider dim " +
                          std::to_string(fallback_->dim()) +
                          " does not match precomputed dim " +
                          std::to_string(dim_));
  }
  for (const auto& [key, vec] : vectors_) {
    if (vec.size() != dim_) {
      throw ValidationError("vector for " + key + " has dim " +
                            std::to_string(vec.size()));
    }
  }
}

std::string PrecomputedProvider::key(std::string_view item_id, TextField field) {
  std::string k(item_id);
  k.push_back('\t');
  k += to_string(field);
  return k;
}

std::vector<double> PrecomputedProvider::embed(std::string_view item_id,
                                               TextField field,
                                               std::string_view text) const {
  auto it = vectors_.find(key(item_id, field));
  if (it != vectors_.end()) return it->second;
  return fallback_->embed(item_id, field, text);
}

std::shared_ptr<PrecomputedProvider> load_precomputed(
    std::istream& in, std::shared_ptr<const TextEmbeddingProvider> fallback) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(kTextVecHeader, 0) != 0) {
    throw ValidationError("missing text vector header");
  }
  std::size_t dim = 0;
  {
    const auto num = std::string_view(line).substr(kTextVecHeader.size());
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), dim);
    if (ec != std::errc() || dim == 0) {
      throw ValidationError("bad dim in text vector header");
    }
  }
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw ParseError(row, "expected <id>\\t<field>\\t<values>");
    }
    const std::string id = line.substr(0, t1);
    const TextField field = parse_text_field(line.substr(t1 + 1, t2 - t1 - 1));
    std::vector<double> vec;
    std::istringstream values(line.substr(t2 + 1));
    std::string tok;
    while (values >> tok) {
      double v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError(row, "bad vector value '" + tok + "'");
      }
      vec.push_back(v);
    }
    if (vec.size() != dim) {
      throw ValidationError("row " + std::to_string(row) + ": vector has dim " +
                            std::to_string(vec.size()) + ", header says " +
                            std::to_string(dim));
    }
    if (!vectors.emplace(PrecomputedProvider::key(id, field), std::move(vec)).second) {
      throw ParseError(row, "duplicate key " + id + "/" + std::string(to_string(field)));
    }
  }
  return std::make_shared<PrecomputedProvider>(dim, std::move(vectors),
                                               std::move(fallback));
}

std::shared_ptr<PrecomputedProvider> load_precomputed(
    const std::filesystem::path& path,
    std::shared_ptr<const TextEmbeddingProvider> fallback) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return load_precomputed(in, std::move(fallback));
}

void write_precomputed(
    std::ostream& out, std::size_t dim,
    const std::vector<std::pair<std::string, std::vector<double>>>& records) {
  out << kTextVecHeader << dim << '\n';
  for (const auto& [key, vec] : records) {
    out << key << '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) out << ' ';
      out << format_double(vec[i]);
    }
    out << '\n';
  }
}

FieldEmbedder::FieldEmbedder(std::shared_ptr<const TextEmbeddingProvider> provider)
    : provider_(std::move(provider)) {
  if (!provider_) throw ValidationError("null text embedding provider");
}

const std::vector<double>& FieldEmbedder::embed_field(const Item& item,
                                                      TextField field) const {
  const std::string key = PrecomputedProvider::key(item.id, field);
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return *it->second;
  }
  auto vec = std::make_unique<std::vector<double>>(
      provider_->embed(item.id, field, field_text(item, field)));
  std::lock_guard lock(mu_);
  auto [it, inserted] = cache_.emplace(key, std::move(vec));
  if (inserted) ++computed_;
  return *it->second;
}

std::size_t FieldEmbedder::computed() const {
  std::lock_guard lock(mu_);
  return computed_;
}

}  // namespace sessionseg
