#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sessionseg/corpus.hpp"

namespace sessionseg {

enum class TextField { kTitle, kBrand };

std::string_view to_string(TextField field);
TextField parse_text_field(std::string_view name);

// Total mapping from (item, field text) to a vector of fixed dimension.
class TextEmbeddingProvider {
 public:
  virtual ~TextEmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(std::string_view item_id, TextField field,
                                    std::string_view text) const = 0;
};

inline constexpr std::size_t kDefaultTextDim = 256;

// Character 2- and 3-grams (over code points, with start/end markers) hashed
// into `dim` signed buckets, then L2-normalized. Empty or blank text maps to
// the zero vector.
std::vector<double> hashed_ngram_embed(std::string_view text, std::size_t dim,
                                       std::uint64_t seed);

class HashedNgramProvider final : public TextEmbeddingProvider {
 public:
  explicit HashedNgramProvider(std::size_t dim = kDefaultTextDim,
                               std::uint64_t seed = 0);
  std::string name() const override { return "hashed-ngram"; }
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view item_id, TextField field,
                            std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Vectors exported from an external model, keyed by (item id, field).
// Unknown keys are answered by the fallback provider.
class PrecomputedProvider final : public TextEmbeddingProvider {
 public:
  PrecomputedProvider(std::size_t dim,
                      std::unordered_map<std::string, std::vector<double>> vectors,
                      std::shared_ptr<const TextEmbeddingProvider> fallback);
  std::string name() const override { return "precomputed"; }
  std::size_t dim() const override { return dim_; }
  std::size_t stored() const { return vectors_.size(); }
  std::vector<double> embed(std::string_view item_id, TextField field,
                            std::string_view text) const override;

  static std::string key(std::string_view item_id, TextField field);

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
  std::shared_ptr<const TextEmbeddingProvider> fallback_;
};

// File layout: a header line "# sessionseg-textvec v1 dim=<n>", then one
// "<item id>\t<title|brand>\t<v1> <v2> ..." record per line. A null fallback
// becomes a HashedNgramProvider of the file's dim. Throws ValidationError on
// inconsistent dims (header vs rows, or fallback vs file).
std::shared_ptr<PrecomputedProvider> load_precomputed(
    std::istream& in,
    std::shared_ptr<const TextEmbeddingProvider> fallback = nullptr);
std::shared_ptr<PrecomputedProvider> load_precomputed(
    const std::filesystem::path& path,
    std::shared_ptr<const TextEmbeddingProvider> fallback = nullptr);
void write_precomputed(
    std::ostream& out, std::size_t dim,
    const std::vector<std::pair<std::string, std::vector<double>>>& records);

// Caching front end; safe for concurrent callers.
class FieldEmbedder {
 public:
  explicit FieldEmbedder(std::shared_ptr<const TextEmbeddingProvider> provider);

  std::size_t dim() const { return provider_->dim(); }
  const TextEmbeddingProvider& provider() const { return *provider_; }

  // Returned reference stays valid for the embedder's lifetime.
  const std::vector<double>& embed_field(const Item& item, TextField field) const;
  std::size_t computed() const;

 private:
  std::shared_ptr<const TextEmbeddingProvider> provider_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, std::unique_ptr<std::vector<double>>> cache_;
  mutable std::size_t computed_ = 0;
};

}  // namespace sessionseg
