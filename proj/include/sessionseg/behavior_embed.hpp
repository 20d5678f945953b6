#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sessionseg/corpus.hpp"

namespace sessionseg {

// Skip-gram with negative sampling over sessions. Defaults are the item
// embedding hyperparameters used for boundary features; alpha, min_alpha and
// ns_exponent follow the usual word2vec conventions.
struct SgnsConfig {
  int vector_size = 200;
  int window = 6;
  int negative = 1;
  double sample = 1e-3;
  int min_count = 1;
  int epochs = 100;
  double alpha = 0.025;
  double min_alpha = 0.0001;
  double ns_exponent = 0.75;
  std::uint64_t seed = 1;
  int workers = 1;  // >1 trains with unsynchronized shared updates

  void validate() const;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  // Throws ValidationError on a duplicate id, wrong length or non-finite value.
  void add(std::string id, std::span<const float> vector);

  // Absent for out-of-vocabulary ids; there is no default vector.
  std::optional<std::span<const float>> lookup(std::string_view id) const;
  bool contains(std::string_view id) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

std::optional<std::span<const float>> lookup(const EmbeddingTable& table,
                                             std::string_view item_id);

struct SgnsReport {
  std::size_t training_sessions = 0;
  std::size_t excluded_sessions = 0;
  std::size_t vocabulary = 0;
  std::size_t tokens = 0;
  std::vector<double> epoch_loss;  // mean per (input, target) pair
};

// Throws ValidationError when no session remains after exclusion.
EmbeddingTable train_behavior_embeddings(
    std::span<const Session> sessions, const SgnsConfig& config,
    const std::unordered_set<std::string>& exclude,
    SgnsReport* report = nullptr);

namespace sgns {

// One negative-sampling step: `input` is the context item's input vector,
// outputs[0] the target's output vector (label 1) and outputs[1..] the noise
// samples (label 0). Applies a gradient step of size lr to every vector and
// returns the loss -log s(h.u) - sum log s(-h.n) evaluated before the step.
// `scratch` must have the input's length.
template <typename Real>
double update(std::span<Real> input, std::span<const std::span<Real>> outputs,
              double lr, std::span<Real> scratch);

}  // namespace sgns

// Binary table format: magic, version, dim, count, then per entry the id and
// its float32 vector (IEEE-754 little-endian), then an FNV-1a checksum.
void save_table(const EmbeddingTable& table, std::ostream& out);
EmbeddingTable load_table(std::istream& in);
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_table(const std::filesystem::path& path);

}  // namespace sessionseg
