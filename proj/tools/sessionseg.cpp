#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <csignal>
#include <fstream>

#include "CLI11.hpp"
#include "sessionseg/annot_service.hpp"
#include "sessionseg/pipeline.hpp"

namespace {

using namespace sessionseg;

struct Overrides {
  std::string config;
  std::string workdir;
  std::optional<int> w;
  std::string model;
  std::string growth;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
};

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (!o.workdir.empty()) cfg.workdir = o.workdir;
  if (o.w) cfg.w = *o.w;
  if (!o.model.empty()) cfg.model = parse_model_kind(o.model);
  if (!o.growth.empty()) cfg.growth = parse_growth(o.growth);
  if (o.trials) cfg.trials = *o.trials;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threshold) cfg.threshold = *o.threshold;
  cfg.validate();
  return cfg;
}

struct ServeOptions {
  std::string sessions;
  std::string catalog;
  std::string store;
  std::string tokens;
  std::string static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  int reservation_seconds = 600;
  std::uint64_t order_seed = 1;
  std::string policy = "first-record";
  std::string out;
};

struct AnnotationBackend {
  Catalog catalog;
  std::unique_ptr<AnnotationStore> store;
};

AnnotationBackend open_store(const PipelineConfig& cfg, const ServeOptions& s,
                             std::vector<std::string> annotators) {
  AnnotationBackend b;
  {
    std::ifstream in(s.catalog.empty() ? cfg.catalog_path() : std::filesystem::path(s.catalog));
    if (!in) throw NotFoundError("cannot open catalog");
    b.catalog = read_catalog(in);
  }
  std::vector<Session> sessions;
  {
    const auto path = s.sessions.empty() ? cfg.log_path() : std::filesystem::path(s.sessions);
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path.string());
    sessions = read_session_log(in);
  }
  StoreConfig sc;
  sc.log_path = s.store.empty() ? cfg.workdir / "annotation_log.jsonl"
                                : std::filesystem::path(s.store);
  sc.annotators = std::move(annotators);
  sc.reservation_ms = static_cast<std::int64_t>(s.reservation_seconds) * 1000;
  sc.seed = s.order_seed;
  b.store = std::make_unique<AnnotationStore>(std::move(sessions), b.catalog, sc);
  return b;
}

AnnotationServer* g_server = nullptr;

void print_eval(const PipelineConfig& cfg, const EvalSummary& s) {
  std::printf("model %s w=%d: test F1 %.4f  PR-AUC %.4f  ROC-AUC %.4f (threshold %.2f)\n",
              std::string(to_string(cfg.model)).c_str(), cfg.w, s.test.f1, s.test.pr_auc,
              s.test.roc_auc, s.test.threshold);
  std::printf("cv F1 %.4f over %zu trials (best #%zu)\n", s.search.best_score,
              s.search.trials.size(), s.search.best_trial);
  std::printf("baseline: best F1 %.4f at cosine < %.4f  PR-AUC %.4f  ROC-AUC %.4f\n",
              s.baseline.best_f1, s.baseline.best_threshold, s.baseline.pr_auc,
              s.baseline.roc_auc);
  std::printf("wrote %s\n", cfg.metrics_path().string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session segmentation toolkit"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON pipeline config")->check(CLI::ExistingFile);
  app.add_option("--workdir", o.workdir, "Directory for pipeline files");
  app.add_option("--w", o.w, "Window radius");
  app.add_option("--model", o.model, "gbdt, logreg or svm");
  app.add_option("--growth", o.growth, "GBDT growth: leaf-wise or level-wise");
  app.add_option("--trials", o.trials, "Hyperparameter search trials");
  app.add_option("--seed", o.seed, "Split, fold and search seed");
  app.add_option("--threshold", o.threshold, "Decision threshold for F1");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  auto* embed = app.add_subcommand("embed", "Train behavior embeddings");
  auto* features = app.add_subcommand("features", "Build the feature dataset");
  auto* tune = app.add_subcommand("tune-train-eval", "Search, refit and evaluate a model");
  auto* importance = app.add_subcommand("importance", "Aggregate SHAP importance");
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  auto* all = app.add_subcommand("all", "embed, features, tune-train-eval in sequence");

  ServeOptions so;
  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  auto* exporter = app.add_subcommand("export-annotations",
                                      "Export labels from an annotation store log");
  for (auto* sub : {serve, exporter}) {
    sub->add_option("--sessions", so.sessions, "Session log to annotate");
    sub->add_option("--catalog", so.catalog, "Item catalog");
    sub->add_option("--store", so.store, "Annotation record log");
    sub->add_option("--order-seed", so.order_seed, "Seed for the session order");
  }
  serve->add_option("--tokens", so.tokens, "JSON map of annotator id to token")
      ->required()
      ->check(CLI::ExistingFile);
  serve->add_option("--static", so.static_dir, "Directory served at /");
  serve->add_option("--host", so.host, "Bind address");
  serve->add_option("--port", so.port, "Port");
  serve->add_option("--reservation-seconds", so.reservation_seconds,
                    "How long an offered session stays reserved");
  exporter->add_option("--policy", so.policy, "first-record or majority");
  exporter->add_option("--out", so.out, "Output annotations file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const PipelineConfig cfg = resolve(o);
    if (synth->parsed()) {
      const auto s = cmd_synth(cfg);
      std::printf("%zu sessions (%zu annotated), %zu items, %zu gaps, %zu boundaries (%.2f%%)\n",
                  s.sessions, s.annotated, s.items, s.gaps, s.boundaries,
                  s.gaps ? 100.0 * s.boundaries / s.gaps : 0.0);
    }
    if (embed->parsed() || all->parsed()) {
      const auto r = cmd_embed(cfg);
      std::printf("embedded %zu items from %zu sessions (%zu annotated sessions excluded)\n",
                  r.vocabulary, r.training_sessions, r.excluded_sessions);
    }
    if (features->parsed() || all->parsed()) {
      const auto f = cmd_features(cfg);
      std::printf("%zu rows x %zu columns, %zu positives (%.2f%%), %zu sessions skipped\n",
                  f.rows, f.columns, f.positives, f.rows ? 100.0 * f.positives / f.rows : 0.0,
                  f.skipped_sessions);
    }
    if (tune->parsed() || all->parsed()) print_eval(cfg, cmd_tune_train_eval(cfg));
    if (importance->parsed()) {
      const auto r = cmd_importance(cfg);
      const std::size_t top = std::min<std::size_t>(10, r.ranked.size());
      for (std::size_t i = 0; i < top; ++i) {
        std::printf("%2zu  %-24s %.6f\n", i + 1, r.ranked[i].label.c_str(),
                    r.ranked[i].mean_abs);
      }
      if (r.approximate) std::printf("(gradient surrogate, approximate)\n");
      std::printf("wrote %s\n", cfg.importance_path().string().c_str());
    }
    if (serve->parsed()) {
      const auto tokens = read_tokens(so.tokens);
      std::vector<std::string> annotators;
      for (const auto& [name, token] : tokens) annotators.push_back(name);
      auto backend = open_store(cfg, so, annotators);
      const AnnotationApi api(*backend.store, tokens);
      AnnotationServer server(api, so.static_dir);
      g_server = &server;
      std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
      std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
      std::printf("serving %zu records on http://%s:%d\n", backend.store->record_count(),
                  so.host.c_str(), so.port);
      std::fflush(stdout);
      server.run(so.host, so.port);
      g_server = nullptr;
    }
    if (exporter->parsed()) {
      auto backend = open_store(cfg, so, {});
      const auto exported = backend.store->export_annotations(parse_export_policy(so.policy));
      std::ofstream out(so.out);
      if (!out) throw Error("cannot open " + so.out + " for writing");
      write_annotations(out, exported);
      std::printf("exported %zu sessions to %s\n", exported.size(), so.out.c_str());
    }
    if (stats->parsed()) {
      const auto r = cmd_stats(cfg);
      const auto line = [](const char* name, const CorpusStats& s) {
        std::printf("%-10s sessions %zu  items %zu  events %zu  length mean %.2f std %.2f "
                    "min %zu median %zu max %zu\n",
                    name, s.total_sessions, s.total_items, s.total_events, s.mean_length,
                    s.std_length, s.min_length, s.median_length, s.max_length);
      };
      line("log", r.log);
      line("annotated", r.annotated);
      std::printf("gaps %zu  boundaries %zu\n", r.gaps, r.boundaries);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
  return 0;
}
