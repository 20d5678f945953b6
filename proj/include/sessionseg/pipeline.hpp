#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "sessionseg/baseline.hpp"
#include "sessionseg/behavior_embed.hpp"
#include "sessionseg/eval_tune.hpp"
#include "sessionseg/explain.hpp"
#include "sessionseg/features.hpp"
#include "sessionseg/gbdt.hpp"
#include "sessionseg/models.hpp"
#include "sessionseg/synth.hpp"
#include "sessionseg/text_embed.hpp"

namespace sessionseg {

struct TextProviderConfig {
  std::string kind = "hashed";     // "hashed" or "precomputed"
  std::filesystem::path path;      // precomputed vectors file
  std::size_t dim = kDefaultTextDim;
  std::uint64_t seed = 0;
};

// Every stage reads and writes files under `workdir`; the input paths default
// to the files cmd_synth writes there.
struct PipelineConfig {
  std::filesystem::path workdir = "work";
  std::filesystem::path log;          // sessions.csv
  std::filesystem::path catalog;      // catalog.csv
  std::filesystem::path annotations;  // annotations.jsonl

  int w = 2;
  ModelKind model = ModelKind::kGbdt;
  Growth growth = Growth::kLeafWise;
  int gbdt_rounds = 100;
  PriceMode price_mode = PriceMode::kSmoothedMin;

  SgnsConfig sgns;
  TextProviderConfig text;
  SynthConfig synth;

  int trials = 50;
  int folds = 5;
  std::uint64_t seed = 42;
  double threshold = 0.5;

  std::size_t shap_background = 1000;
  std::size_t shap_rows = 200;  // 0 = every test row
  ShapMode shap_mode = ShapMode::kInterventional;

  void validate() const;

  std::filesystem::path log_path() const;
  std::filesystem::path catalog_path() const;
  std::filesystem::path annotations_path() const;
  std::filesystem::path embeddings_path() const;
  std::filesystem::path features_path() const;
  std::filesystem::path split_path() const;
  std::filesystem::path model_path() const;
  std::filesystem::path metrics_path() const;
  std::filesystem::path trials_path() const;
  std::filesystem::path importance_path() const;
  std::filesystem::path baseline_path() const;
};

// Unknown keys are rejected. Relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j,
                                const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

std::string to_string(Growth growth);
Growth parse_growth(std::string_view name);

// Builds the search space and trainer for a model family.
SearchSpace search_space(ModelKind kind, Growth growth);
TrainedModel fit_with_params(ModelKind kind, Growth growth, const ParamSet& params,
                             const Matrix& x, const Labels& y, FeatureMeta meta,
                             int gbdt_rounds, std::uint64_t seed);

struct SynthSummary {
  std::size_t sessions = 0;
  std::size_t annotated = 0;
  std::size_t items = 0;
  std::size_t gaps = 0;
  std::size_t boundaries = 0;
};
SynthSummary cmd_synth(const PipelineConfig& cfg);

SgnsReport cmd_embed(const PipelineConfig& cfg);

struct FeaturesSummary {
  std::size_t rows = 0;
  std::size_t positives = 0;
  std::size_t columns = 0;
  std::size_t skipped_sessions = 0;
};
FeaturesSummary cmd_features(const PipelineConfig& cfg);

struct EvalSummary {
  nlohmann::ordered_json report;  // written verbatim to metrics_path()
  MetricReport test;
  BaselineReport baseline;
  SearchResult search;
};
EvalSummary cmd_tune_train_eval(const PipelineConfig& cfg);

ImportanceReport cmd_importance(const PipelineConfig& cfg);

struct CorpusReport {
  CorpusStats log;
  CorpusStats annotated;
  std::size_t gaps = 0;
  std::size_t boundaries = 0;
};
CorpusReport cmd_stats(const PipelineConfig& cfg);

}  // namespace sessionseg
