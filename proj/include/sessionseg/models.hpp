#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sessionseg/common.hpp"
#include "sessionseg/gbdt.hpp"
#include "sessionseg/logreg.hpp"
#include "sessionseg/svm.hpp"

namespace sessionseg {

enum class ModelKind { kGbdt, kLogreg, kSvm };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

// Feature metadata carried by every model so it is never applied to a
// dataset built with a different window or layout.
struct FeatureMeta {
  int w = 0;
  int layout_version = 0;
};

class TrainedModel {
 public:
  using Params = std::variant<GbdtModel, LogregModel, SvmModel>;

  TrainedModel(Params params, std::size_t feature_dim, FeatureMeta meta);

  ModelKind kind() const;
  std::size_t feature_dim() const { return feature_dim_; }
  const FeatureMeta& meta() const { return meta_; }
  const Params& params() const { return params_; }
  const GbdtModel& gbdt() const { return std::get<GbdtModel>(params_); }
  const LogregModel& logreg() const { return std::get<LogregModel>(params_); }
  const SvmModel& svm() const { return std::get<SvmModel>(params_); }

  // Log-odds of a boundary: the boosted margin, the linear margin, or the
  // Platt-calibrated SVM decision value. Throws on a dimension mismatch.
  double margin(std::span<const double> x) const;
  double predict_proba(std::span<const double> x) const;
  std::vector<double> predict_proba(const Matrix& x) const;

 private:
  Params params_;
  std::size_t feature_dim_;
  FeatureMeta meta_;
};

TrainedModel fit_gbdt(const Matrix& x, const Labels& y, const GbdtConfig& cfg,
                      FeatureMeta meta = {}, GbdtTrainingLog* log = nullptr);
TrainedModel fit_logreg(const Matrix& x, const Labels& y,
                        const LogregConfig& cfg, FeatureMeta meta = {});
TrainedModel fit_svm(const Matrix& x, const Labels& y, const SvmConfig& cfg,
                     FeatureMeta meta = {});

// JSON document tagged with format, version, kind and feature metadata.
// Doubles are written in shortest round-trip form, so reloading is lossless.
void save_model(const TrainedModel& model, std::ostream& out);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
// Throws ValidationError on a corrupt or truncated file, a version mismatch,
// or (when `expected` is given) different feature metadata.
TrainedModel load_model(std::istream& in,
                        std::optional<FeatureMeta> expected = std::nullopt);
TrainedModel load_model(const std::filesystem::path& path,
                        std::optional<FeatureMeta> expected = std::nullopt);

// Throws ValidationError when the model was trained for other features.
void check_compatible(const TrainedModel& model, const FeatureMeta& meta,
                      std::size_t feature_dim);

}  // namespace sessionseg
