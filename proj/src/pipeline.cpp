#include "sessionseg/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "sessionseg/corpus.hpp"

namespace sessionseg {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<Session> load_sessions(const fs::path& path) {
  auto in = open_in(path);
  return read_session_log(in);
}

std::vector<AnnotatedSession> load_annotations(const fs::path& path) {
  auto in = open_in(path);
  return read_annotations(in);
}

Catalog load_catalog_file(const fs::path& path) {
  auto in = open_in(path);
  return read_catalog(in);
}

std::shared_ptr<const TextEmbeddingProvider> make_provider(const TextProviderConfig& t) {
  if (t.dim == 0) throw ValidationError("text dim must be positive");
  auto hashed = std::make_shared<HashedNgramProvider>(t.dim, t.seed);
  if (t.kind == "hashed") return hashed;
  if (t.kind == "precomputed") {
    if (t.path.empty()) throw ValidationError("precomputed text provider needs a path");
    return load_precomputed(t.path, hashed);
  }
  throw ValidationError("unknown text provider '" + t.kind + "'");
}

PriceMode parse_price_mode(const std::string& s) {
  if (s == "smoothed-min") return PriceMode::kSmoothedMin;
  if (s == "next-item-min") return PriceMode::kNextItemMin;
  throw ValidationError("unknown price mode '" + s + "'");
}

ShapMode parse_shap_mode(const std::string& s) {
  if (s == "interventional") return ShapMode::kInterventional;
  if (s == "path-dependent") return ShapMode::kPathDependent;
  throw ValidationError("unknown shap mode '" + s + "'");
}

// Reads the keys of `j` into fields, rejecting anything unknown.
class Reader {
 public:
  Reader(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    if (!j_.is_object()) throw ValidationError(scope_ + ": expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ValidationError("unknown config key '" + scope_ + key + "'");
      }
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config key '" + scope_ + key + "' has the wrong type");
    }
  }

  void path(const std::string& key, fs::path& out, const fs::path& base) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = fs::path(s).is_absolute() || base.empty() ? fs::path(s) : base / s;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string scope_;
  std::unordered_set<std::string> seen_;
};

void check_classes(const Labels& y, const std::string& what) {
  const bool pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool neg = std::find(y.begin(), y.end(), 0) != y.end();
  if (!pos || !neg) {
    throw ValidationError(what + " needs both boundary and non-boundary gaps");
  }
}

ordered_json params_json(const ParamSet& p) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

FeatureDataset load_features(const PipelineConfig& cfg) {
  auto in = open_in(cfg.features_path());
  auto data = read_dataset(in);
  if (data.w != cfg.w) {
    throw ValidationError("feature file was built with w=" + std::to_string(data.w) +
                          ", config asks for w=" + std::to_string(cfg.w));
  }
  if (data.layout_version != kFeatureLayoutVersion) {
    throw ValidationError("feature file layout version " +
                          std::to_string(data.layout_version) + " is not supported");
  }
  return data;
}

std::string suffix(const PipelineConfig& cfg) {
  std::string s = std::string(to_string(cfg.model));
  if (cfg.model == ModelKind::kGbdt) s += cfg.growth == Growth::kLeafWise ? "-leaf" : "-level";
  return s + "_w" + std::to_string(cfg.w);
}

}  // namespace

std::string to_string(Growth growth) {
  return growth == Growth::kLeafWise ? "leaf-wise" : "level-wise";
}

Growth parse_growth(std::string_view name) {
  if (name == "leaf-wise" || name == "leaf") return Growth::kLeafWise;
  if (name == "level-wise" || name == "level") return Growth::kLevelWise;
  throw ValidationError("unknown growth strategy '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  WindowConfig{w}.validate();
  if (trials < 1) throw ValidationError("trials must be >= 1");
  if (folds < 2) throw ValidationError("folds must be >= 2");
  if (gbdt_rounds < 1) throw ValidationError("gbdt_rounds must be >= 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ValidationError("threshold must lie in [0, 1]");
  }
  if (shap_background == 0) throw ValidationError("shap background must be >= 1");
  sgns.validate();
}

fs::path PipelineConfig::log_path() const {
  return log.empty() ? workdir / "sessions.csv" : log;
}
fs::path PipelineConfig::catalog_path() const {
  return catalog.empty() ? workdir / "catalog.csv" : catalog;
}
fs::path PipelineConfig::annotations_path() const {
  return annotations.empty() ? workdir / "annotations.jsonl" : annotations;
}
fs::path PipelineConfig::embeddings_path() const { return workdir / "embeddings.bin"; }
fs::path PipelineConfig::features_path() const {
  return workdir / ("features_w" + std::to_string(w) + ".csv");
}
fs::path PipelineConfig::split_path() const { return workdir / "split.tsv"; }
fs::path PipelineConfig::model_path() const {
  return workdir / ("model_" + suffix(*this) + ".json");
}
fs::path PipelineConfig::metrics_path() const {
  return workdir / ("metrics_" + suffix(*this) + ".json");
}
fs::path PipelineConfig::trials_path() const {
  return workdir / ("trials_" + suffix(*this) + ".jsonl");
}
fs::path PipelineConfig::importance_path() const {
  return workdir / ("importance_" + suffix(*this) + ".csv");
}
fs::path PipelineConfig::baseline_path() const { return workdir / "baseline_sweep.csv"; }

PipelineConfig config_from_json(const json& j, const fs::path& base) {
  PipelineConfig cfg;
  Reader r(j, "");
  r.path("workdir", cfg.workdir, base);
  r.path("log", cfg.log, base);
  r.path("catalog", cfg.catalog, base);
  r.path("annotations", cfg.annotations, base);
  r.get("w", cfg.w);
  std::string model = "gbdt", growth = "leaf-wise", price = "smoothed-min";
  r.get("model", model);
  r.get("growth", growth);
  r.get("price_mode", price);
  cfg.model = parse_model_kind(model);
  cfg.growth = parse_growth(growth);
  cfg.price_mode = parse_price_mode(price);
  r.get("gbdt_rounds", cfg.gbdt_rounds);
  r.get("trials", cfg.trials);
  r.get("folds", cfg.folds);
  r.get("seed", cfg.seed);
  r.get("threshold", cfg.threshold);
  if (const json* s = r.child("sgns")) {
    Reader sr(*s, "sgns.");
    sr.get("vector_size", cfg.sgns.vector_size);
    sr.get("window", cfg.sgns.window);
    sr.get("negative", cfg.sgns.negative);
    sr.get("sample", cfg.sgns.sample);
    sr.get("min_count", cfg.sgns.min_count);
    sr.get("epochs", cfg.sgns.epochs);
    sr.get("alpha", cfg.sgns.alpha);
    sr.get("min_alpha", cfg.sgns.min_alpha);
    sr.get("ns_exponent", cfg.sgns.ns_exponent);
    sr.get("seed", cfg.sgns.seed);
    sr.get("workers", cfg.sgns.workers);
  }
  if (const json* t = r.child("text")) {
    Reader tr(*t, "text.");
    tr.get("kind", cfg.text.kind);
    tr.path("path", cfg.text.path, base);
    tr.get("dim", cfg.text.dim);
    tr.get("seed", cfg.text.seed);
  }
  if (const json* s = r.child("synth")) {
    Reader sr(*s, "synth.");
    sr.get("annotated_sessions", cfg.synth.annotated_sessions);
    sr.get("unlabeled_sessions", cfg.synth.unlabeled_sessions);
    sr.get("topics", cfg.synth.topics);
    sr.get("items_per_topic", cfg.synth.items_per_topic);
    sr.get("boundary_rate", cfg.synth.boundary_rate);
    sr.get("sibling_switch_rate", cfg.synth.sibling_switch_rate);
    sr.get("sibling_mix_rate", cfg.synth.sibling_mix_rate);
    sr.get("min_length", cfg.synth.min_length);
    sr.get("mean_length", cfg.synth.mean_length);
    sr.get("cold_item_rate", cfg.synth.cold_item_rate);
    sr.get("missing_price_rate", cfg.synth.missing_price_rate);
    sr.get("missing_brand_rate", cfg.synth.missing_brand_rate);
    sr.get("seed", cfg.synth.seed);
  }
  if (const json* s = r.child("shap")) {
    Reader sr(*s, "shap.");
    sr.get("background", cfg.shap_background);
    sr.get("rows", cfg.shap_rows);
    std::string mode = "interventional";
    sr.get("mode", mode);
    cfg.shap_mode = parse_shap_mode(mode);
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

SearchSpace search_space(ModelKind kind, Growth growth) {
  switch (kind) {
    case ModelKind::kGbdt:
      return growth == Growth::kLeafWise ? leafwise_gbdt_space() : levelwise_gbdt_space();
    case ModelKind::kLogreg: return logreg_space();
    case ModelKind::kSvm: return svm_space();
  }
  throw ValidationError("unknown model kind");
}

TrainedModel fit_with_params(ModelKind kind, Growth growth, const ParamSet& p,
                             const Matrix& x, const Labels& y, FeatureMeta meta,
                             int gbdt_rounds, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::kGbdt: {
      GbdtConfig g;
      g.growth = growth;
      g.num_rounds = gbdt_rounds;
      g.seed = seed;
      g.learning_rate = param(p, "learning_rate", g.learning_rate);
      if (growth == Growth::kLeafWise) {
        g.feature_fraction = param(p, "feature_fraction", g.feature_fraction);
        g.l2_lambda = param(p, "lambda_l2", g.l2_lambda);
        g.num_leaves = static_cast<int>(param(p, "num_leaves", g.num_leaves));
        g.min_child_hessian = param(p, "min_sum_hessian_in_leaf", g.min_child_hessian);
        g.bagging_fraction = param(p, "bagging_fraction", g.bagging_fraction);
      } else {
        g.max_depth = static_cast<int>(param(p, "max_depth", 6));
        g.feature_fraction = param(p, "colsample_bytree", g.feature_fraction);
        g.gamma = param(p, "gamma", g.gamma);
        g.l2_lambda = param(p, "lambda", g.l2_lambda);
        g.min_child_hessian = param(p, "min_child_weight", g.min_child_hessian);
        g.bagging_fraction = param(p, "subsample", g.bagging_fraction);
      }
      return fit_gbdt(x, y, g, meta);
    }
    case ModelKind::kLogreg: {
      LogregConfig l;
      l.C = param(p, "C", l.C);
      return fit_logreg(x, y, l, meta);
    }
    case ModelKind::kSvm: {
      SvmConfig s;
      s.C = param(p, "C", s.C);
      s.gamma = param(p, "gamma", s.gamma);
      s.seed = seed;
      return fit_svm(x, y, s, meta);
    }
  }
  throw ValidationError("unknown model kind");
}

SynthSummary cmd_synth(const PipelineConfig& cfg) {
  const auto corpus = generate_corpus(cfg.synth);
  fs::create_directories(cfg.workdir);
  {
    auto out = open_out(cfg.log_path());
    write_session_log(out, corpus.sessions);
  }
  {
    auto out = open_out(cfg.catalog_path());
    write_catalog(out, corpus.catalog);
  }
  {
    auto out = open_out(cfg.annotations_path());
    write_annotations(out, corpus.annotated);
  }
  SynthSummary s;
  s.sessions = corpus.sessions.size();
  s.annotated = corpus.annotated.size();
  s.items = corpus.catalog.size();
  for (const auto& a : corpus.annotated) {
    s.gaps += a.gap_labels.size();
    s.boundaries += static_cast<std::size_t>(
        std::count(a.gap_labels.begin(), a.gap_labels.end(), 1));
  }
  return s;
}

SgnsReport cmd_embed(const PipelineConfig& cfg) {
  cfg.sgns.validate();
  const auto sessions = load_sessions(cfg.log_path());
  if (sessions.empty()) throw ValidationError("session log " + cfg.log_path().string() + " is empty");
  std::unordered_set<std::string> exclude;
  if (fs::exists(cfg.annotations_path())) {
    for (const auto& a : load_annotations(cfg.annotations_path())) {
      exclude.insert(a.session.session_id);
    }
  }
  SgnsReport report;
  const auto table = train_behavior_embeddings(sessions, cfg.sgns, exclude, &report);
  fs::create_directories(cfg.workdir);
  save_table(table, cfg.embeddings_path());

  ordered_json j = {{"format", "sessionseg-embed-report"},
                    {"version", 1},
                    {"training_sessions", report.training_sessions},
                    {"excluded_sessions", report.excluded_sessions},
                    {"vocabulary", report.vocabulary},
                    {"tokens", report.tokens},
                    {"epoch_loss", report.epoch_loss},
                    {"config",
                     {{"vector_size", cfg.sgns.vector_size},
                      {"window", cfg.sgns.window},
                      {"negative", cfg.sgns.negative},
                      {"sample", cfg.sgns.sample},
                      {"min_count", cfg.sgns.min_count},
                      {"epochs", cfg.sgns.epochs},
                      {"seed", cfg.sgns.seed}}}};
  auto out = open_out(cfg.workdir / "embed_report.json");
  out << j.dump(2) << '\n';
  return report;
}

FeaturesSummary cmd_features(const PipelineConfig& cfg) {
  WindowConfig{cfg.w}.validate();
  const Catalog catalog = load_catalog_file(cfg.catalog_path());
  const auto annotated = load_annotations(cfg.annotations_path());
  const EmbeddingTable table = load_table(cfg.embeddings_path());
  const auto provider = make_provider(cfg.text);
  const FieldEmbedder title(provider);
  const FieldEmbedder brand(provider);
  const FeatureContext ctx{&catalog, &table, &title, &brand, cfg.price_mode};
  const auto data = build_dataset(annotated, cfg.w, ctx);
  auto out = open_out(cfg.features_path());
  write_dataset(out, data);
  return {data.x.rows(), data.positives(), data.x.cols(), data.skipped_sessions};
}

EvalSummary cmd_tune_train_eval(const PipelineConfig& cfg) {
  cfg.validate();
  const auto data = load_features(cfg);
  const auto annotated = load_annotations(cfg.annotations_path());
  const auto split = split_annotated(annotated, SplitRatio{}, cfg.seed);
  {
    auto out = open_out(cfg.split_path());
    write_split_manifest(out, split, cfg.seed);
  }
  std::vector<std::string> train_ids, test_ids;
  for (const auto& a : split.train) train_ids.push_back(a.session.session_id);
  for (const auto& a : split.test) test_ids.push_back(a.session.session_id);
  const auto train = subset_by_groups(data, train_ids);
  const auto test = subset_by_groups(data, test_ids);
  check_classes(train.y, "the training split");
  check_classes(test.y, "the test split");

  const FeatureMeta meta{data.w, data.layout_version};
  const auto folds = group_kfold(train.groups, cfg.folds, derive_seed(cfg.seed, 1));
  const std::uint64_t model_seed = derive_seed(cfg.seed, 2);
  const Trainer trainer = [&](const ParamSet& p, const Matrix& xt, const Labels& yt,
                              const Matrix& xv) {
    return fit_with_params(cfg.model, cfg.growth, p, xt, yt, meta, cfg.gbdt_rounds,
                           model_seed)
        .predict_proba(xv);
  };

  EvalSummary s;
  {
    auto log = open_out(cfg.trials_path());
    s.search = random_search(search_space(cfg.model, cfg.growth), cfg.trials, folds,
                             train.x, train.y, trainer, derive_seed(cfg.seed, 3),
                             cfg.threshold, &log);
  }
  const auto model = fit_with_params(cfg.model, cfg.growth, s.search.best_params,
                                     train.x, train.y, meta, cfg.gbdt_rounds, model_seed);
  save_model(model, cfg.model_path());
  s.test = evaluate(model, test.x, test.y, cfg.threshold);

  const EmbeddingTable table = load_table(cfg.embeddings_path());
  const auto grid = threshold_grid();
  s.baseline = baseline_report(split.test, table, grid);
  {
    auto out = open_out(cfg.baseline_path());
    write_sweep(out, s.baseline);
  }

  ordered_json model_j = {{"kind", to_string(cfg.model)}};
  if (cfg.model == ModelKind::kGbdt) {
    model_j["growth"] = to_string(cfg.growth);
    model_j["rounds"] = cfg.gbdt_rounds;
  }
  s.report = {
      {"format", "sessionseg-metrics"},
      {"version", 1},
      {"w", cfg.w},
      {"layout_version", data.layout_version},
      {"model", model_j},
      {"seed", cfg.seed},
      {"split", {{"train_sessions", train_ids.size()},
                 {"test_sessions", test_ids.size()},
                 {"train_rows", train.x.rows()},
                 {"test_rows", test.x.rows()},
                 {"test_positives", test.positives()}}},
      {"search", {{"trials", cfg.trials},
                  {"folds", cfg.folds},
                  {"failed_trials", std::count_if(s.search.trials.begin(),
                                                  s.search.trials.end(),
                                                  [](const auto& t) { return t.failed; })},
                  {"best_trial", s.search.best_trial},
                  {"cv_f1", s.search.best_score},
                  {"best_params", params_json(s.search.best_params)}}},
      {"test", s.test.to_json()},
      {"baseline", {{"direction", "cosine-below-threshold"},
                    {"roc_auc", s.baseline.roc_auc},
                    {"pr_auc", s.baseline.pr_auc},
                    {"best_threshold", s.baseline.best_threshold},
                    {"best_f1", s.baseline.best_f1},
                    {"oov_gaps", s.baseline.oov_gaps}}},
  };
  auto out = open_out(cfg.metrics_path());
  out << s.report.dump(2) << '\n';
  return s;
}

ImportanceReport cmd_importance(const PipelineConfig& cfg) {
  cfg.validate();
  const auto data = load_features(cfg);
  const auto model =
      load_model(cfg.model_path(), FeatureMeta{data.w, data.layout_version});
  check_compatible(model, FeatureMeta{data.w, data.layout_version}, data.x.cols());

  SplitManifest manifest;
  {
    auto in = open_in(cfg.split_path());
    manifest = read_split_manifest(in);
  }
  const auto train = subset_by_groups(data, manifest.train_ids);
  const auto test = subset_by_groups(data, manifest.test_ids);
  if (train.x.rows() == 0 || test.x.rows() == 0) {
    throw ValidationError("split manifest does not match the feature file");
  }
  const Matrix background =
      sample_background(train.x, cfg.shap_background, derive_seed(cfg.seed, 4));
  const Matrix rows = cfg.shap_rows == 0
                          ? test.x
                          : sample_background(test.x, cfg.shap_rows, derive_seed(cfg.seed, 5));
  const auto means = column_means(background);

  std::vector<Attribution> attributions;
  attributions.reserve(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    attributions.push_back(model.kind() == ModelKind::kGbdt
                               ? tree_shap(model, rows.row(r), background, cfg.shap_mode)
                               : linear_shap(model, rows.row(r), means));
  }
  auto report = aggregate_importance(attributions, data.w);
  auto out = open_out(cfg.importance_path());
  write_importance(out, report);
  return report;
}

CorpusReport cmd_stats(const PipelineConfig& cfg) {
  CorpusReport r;
  r.log = corpus_stats(load_sessions(cfg.log_path()));
  if (fs::exists(cfg.annotations_path())) {
    const auto annotated = load_annotations(cfg.annotations_path());
    std::vector<Session> sessions;
    for (const auto& a : annotated) {
      sessions.push_back(a.session);
      r.gaps += a.gap_labels.size();
      r.boundaries += static_cast<std::size_t>(
          std::count(a.gap_labels.begin(), a.gap_labels.end(), 1));
    }
    r.annotated = corpus_stats(sessions);
  }
  return r;
}

}  // namespace sessionseg
