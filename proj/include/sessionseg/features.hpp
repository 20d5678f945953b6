#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sessionseg/behavior_embed.hpp"
#include "sessionseg/common.hpp"
#include "sessionseg/corpus.hpp"
#include "sessionseg/text_embed.hpp"

namespace sessionseg {

// Bumped whenever the feature layout below changes; models and dataset files
// record it and refuse to mix versions.
inline constexpr int kFeatureLayoutVersion = 1;

// Per-pair similarity order inside the feature vector.
enum class SimilarityKind { kBehavior = 0, kBrand = 1, kTitle = 2, kPrice = 3 };
inline constexpr int kSimilarityKinds = 4;
std::string_view to_string(SimilarityKind kind);

// Window positions are 0..2w-1 = [L_w, ..., L_1, R_1, ..., R_w].
struct WindowConfig {
  int w = 2;
  void validate() const;
};

// All pairs (a, b) with 0 <= a < b < 2w in lexicographic order.
std::vector<std::pair<int, int>> pair_index(int w);
std::size_t pair_count(int w);   // C(2w, 2)
std::size_t feature_dim(int w);  // 4 * C(2w, 2)

// "L_i" / "R_j" for a window position.
std::string position_label(int position, int w);
// "(L_i,R_j):<kind>" for a feature column.
std::string feature_label(std::size_t feature_index, int w);

// Item ids at the 2w window positions around the gap between items g and
// g + 1. Positions past either end repeat the nearest item on that side.
std::vector<std::string> window_items(const Session& session,
                                      std::size_t gap_index, int w);
// Same window as session indices.
std::vector<std::size_t> window_positions(const Session& session,
                                          std::size_t gap_index, int w);

// Cosine similarity; 0 when either vector has zero norm. Throws
// ValidationError on a length mismatch.
double cosine(std::span<const double> u, std::span<const double> v);
double cosine(std::span<const float> u, std::span<const float> v);

// exp(-|a - b| / (min(a, b) + 1)). Throws ValidationError on negative or
// non-finite prices.
double price_similarity(double price_a, double price_b);

// kSmoothedMin uses min(p_i, p_j) + 1 as the denominator. kNextItemMin reads
// the denominator as the smaller price among the items that follow u_i and u_j
// in the session (the last item stands in for its own successor).
enum class PriceMode { kSmoothedMin, kNextItemMin };

struct FeatureContext {
  const Catalog* catalog = nullptr;
  const EmbeddingTable* behavior = nullptr;
  const FieldEmbedder* title = nullptr;
  const FieldEmbedder* brand = nullptr;
  PriceMode price_mode = PriceMode::kSmoothedMin;
};

// Pair-major vector of length feature_dim(w); each pair contributes
// [behavior, brand, title, price]. Missing behavior embeddings or prices give
// a 0 entry. Throws NotFoundError naming an item absent from the catalog.
std::vector<double> build_feature_vector(const Session& session,
                                         std::size_t gap_index, int w,
                                         const FeatureContext& ctx);

struct FeatureDataset {
  int w = 0;
  int layout_version = kFeatureLayoutVersion;
  Matrix x;
  Labels y;
  std::vector<std::string> groups;      // session id per row
  std::vector<std::size_t> gap_index;   // gap per row
  std::size_t skipped_sessions = 0;     // sessions with no gaps

  std::size_t positives() const;
};

// One row per gap in session order then gap order.
FeatureDataset build_dataset(std::span<const AnnotatedSession> annotated,
                             int w, const FeatureContext& ctx);

// Keeps only rows whose group is in `ids` (row order preserved).
FeatureDataset subset_by_groups(const FeatureDataset& data,
                                std::span<const std::string> ids);

// Text file: "# sessionseg-features v1 w=<w> d=<pairs> layout=<v> cols=<4d>",
// a CSV column header, then session_id,gap_index,label,f0..f{4d-1} rows.
void write_dataset(std::ostream& out, const FeatureDataset& data);
FeatureDataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const FeatureDataset& data);
FeatureDataset read_dataset(const std::filesystem::path& path);

}  // namespace sessionseg
