// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "sessionseg/pipeline.hpp"

using namespace sessionseg;
namespace fs = std::filesystem;

namespace {

// Collects failed expectations for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  bool failed() const { return failed_; }
  std::string summary() const {
    std::string s = notes_;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + ("failed: " + f);
    return s;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
  std::string notes_;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Matrix uniform_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(r, c) = u(rng);
  return x;
}

void formula_oracles(Check& c) {
  const double p = price_similarity(100, 200);
  c.expect(std::abs(p - std::exp(-100.0 / 101.0)) <= 1e-12, "price_similarity(100,200)");
  c.note("price_similarity(100,200)=" + fmt(p, 15));
  const std::vector<double> u{1.5, -2.0, 0.25}, colinear{3.0, -4.0, 0.5},
      antipodal{-1.5, 2.0, -0.25};
  const std::vector<double> e1{2, 0, 0}, e2{0, -3, 0};
  c.expect(cosine(u, colinear) == 1.0, "colinear cosine");
  c.expect(cosine(u, antipodal) == -1.0, "antipodal cosine");
  c.expect(cosine(e1, e2) == 0.0, "orthogonal cosine");
  c.expect(cosine(u, std::vector<double>(3, 0.0)) == 0.0, "zero-norm cosine");
}

void feature_dims(Check& c) {
  Catalog catalog;
  EmbeddingTable table(3);
  const std::vector<std::string> ids{"u1", "u2", "u3", "u4", "u5"};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    catalog.add({ids[i], "title " + ids[i], i % 2 ? "brand" : "", 10.0 * (i + 1)});
    const std::vector<float> v{1.0f + i, 0.5f * i, -1.0f};
    if (i != 4) table.add(ids[i], v);
  }
  const FieldEmbedder title(std::make_shared<HashedNgramProvider>());
  const FieldEmbedder brand(std::make_shared<HashedNgramProvider>());
  const FeatureContext ctx{&catalog, &table, &title, &brand};
  const std::size_t want[] = {4, 24, 60, 112};
  std::vector<Session> sessions{{"a", {"u1", "u2"}}, {"b", {"u1", "u2", "u3", "u4"}},
                                {"c", {"u5", "u1", "u2", "u3", "u4", "u5", "u2"}}};
  for (int w = 1; w <= 4; ++w) {
    c.expect(feature_dim(w) == want[w - 1], "feature_dim(" + std::to_string(w) + ")");
    for (const auto& s : sessions) {
      for (std::size_t g = 0; g < s.gap_count(); ++g) {
        const auto v = build_feature_vector(s, g, w, ctx);
        c.expect(v.size() == want[w - 1], "vector length w=" + std::to_string(w));
      }
    }
  }
  const auto padded = window_items(sessions[1], 0, 2);
  c.expect(padded == std::vector<std::string>{"u1", "u1", "u2", "u3"}, "padding example");
  c.note("w=1..4 lengths 4/24/60/112; [u1,u2,u3,u4] gap 0 w=2 -> [" + padded[0] + "," +
         padded[1] + "," + padded[2] + "," + padded[3] + "]");
}

void metric_oracles(Check& c) {
  const std::vector<int> hy{1, 0, 1, 0};
  const std::vector<double> hs{0.9, 0.8, 0.7, 0.1};
  c.expect(roc_auc(hy, hs) == 0.75, "hand example ROC-AUC");
  std::mt19937_64 rng(2024);
  int instances = 0;
  double worst_tie = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 2 + rng() % 19;
    std::vector<int> y(n);
    std::vector<double> s(n);
    const bool ties = trial % 2;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = ties ? static_cast<double>(rng() % 5) / 4.0
                  : std::uniform_real_distribution<double>(0, 1)(rng);
    }
    y[0] = 1;
    y[n - 1] = 0;
    const double roc = roc_auc(y, s), roc_o = oracle::roc_auc_pairs(y, s);
    const double pr = pr_auc(y, s), pr_o = oracle::pr_auc_sweep(y, s);
    if (ties) {
      worst_tie = std::max({worst_tie, std::abs(roc - roc_o), std::abs(pr - pr_o)});
      c.expect(std::abs(roc - roc_o) <= 1e-12 && std::abs(pr - pr_o) <= 1e-12, "tied instance");
    } else {
      c.expect(roc == roc_o, "ROC on distinct scores");
      c.expect(std::abs(pr - pr_o) <= 4 * std::numeric_limits<double>::epsilon(),
               "PR on distinct scores");
    }
    ++instances;
  }
  c.note(std::to_string(instances) + " instances, worst tied diff " + fmt(worst_tie, 17) +
         ", hand example " + fmt(roc_auc(hy, hs), 2));
}

void leakage(Check& c) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 30 + rng() % 200;
    const std::size_t n_groups = 5 + rng() % 40;
    std::vector<std::string> groups(rows);
    for (auto& g : groups) g = "s" + std::to_string(rng() % n_groups);
    if (std::set<std::string>(groups.begin(), groups.end()).size() < 5) continue;
    const auto plan = group_kfold(groups, 5, static_cast<std::uint64_t>(trial));
    std::map<std::string, int> fold_of;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto [it, fresh] = fold_of.emplace(groups[r], plan.fold_of_row[r]);
      c.expect(it->second == plan.fold_of_row[r], "group split across folds");
    }
  }
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::vector<AnnotatedSession> ann;
    const std::size_t n = 2 + seed % 60;
    for (std::size_t i = 0; i < n; ++i) {
      ann.push_back({{"s" + std::to_string(i), {"A", "B"}}, {static_cast<int>(i % 2)}, ""});
    }
    const auto split = split_annotated(ann, {}, seed);
    std::set<std::string> train;
    for (const auto& a : split.train) train.insert(a.session.session_id);
    for (const auto& a : split.test) c.expect(!train.contains(a.session.session_id), "4:1 split");
    c.expect(split.train.size() + split.test.size() == n, "split loses sessions");
  }
  c.note("1000 group assignments, 200 splits");
}

void model_numerics(Check& c) {
  std::mt19937_64 rng(5);
  // Logistic loss gradient.
  {
    const Matrix x = uniform_rows(rng, 50, 6);
    Labels y(50);
    for (std::size_t r = 0; r < 50; ++r) y[r] = x(r, 0) - x(r, 3) + 0.2 * x(r, 5) > 0;
    LogregConfig cfg;
    cfg.C = 2.0;
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> at(7);
      for (auto& v : at) v = std::uniform_real_distribution<double>(-2, 2)(rng);
      std::vector<double> grad;
      logreg_objective(at, x, y, cfg, &grad);
      const auto num = oracle::numeric_gradient(
          [&](std::span<const double> p) { return logreg_objective(p, x, y, cfg); }, at);
      for (std::size_t i = 0; i < at.size(); ++i) {
        worst = std::max(worst, std::abs(grad[i] - num[i]) / std::max(1.0, std::abs(num[i])));
      }
    }
    c.expect(worst <= 1e-4, "logistic gradient");
    c.note("logreg grad rel err " + fmt(worst, 10));
  }
  // Boosting loss per round.
  {
    const Matrix x = uniform_rows(rng, 400, 5);
    Labels y(400);
    for (std::size_t r = 0; r < 400; ++r) y[r] = x(r, 0) * x(r, 1) + 0.3 * x(r, 2) > 0;
    for (Growth g : {Growth::kLeafWise, Growth::kLevelWise}) {
      GbdtConfig cfg;
      cfg.growth = g;
      cfg.max_depth = g == Growth::kLevelWise ? 4 : -1;
      cfg.num_rounds = 50;
      GbdtTrainingLog log;
      train_gbdt(x, y, cfg, &log);
      for (std::size_t i = 1; i < log.loss.size(); ++i)
        c.expect(log.loss[i] <= log.loss[i - 1] + 1e-12, "gbdt loss increased");
    }
  }
  // Depth-one split against exhaustive search.
  int stumps = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 8 + rng() % 23;
    const Matrix x = uniform_rows(rng, n, 3);
    Labels y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = x(r, trial % 3) + 0.4 * x(r, (trial + 1) % 3) > 0;
    y[0] = 1;
    y[1] = 0;
    GbdtConfig cfg;
    cfg.num_rounds = 1;
    cfg.learning_rate = 1;
    cfg.growth = Growth::kLevelWise;
    cfg.max_depth = 1;
    const auto m = train_gbdt(x, y, cfg);
    const auto want = oracle::best_stump(x, y, cfg.l2_lambda, cfg.min_child_hessian);
    const auto& root = m.trees.at(0).nodes.at(0);
    c.expect(root.feature == want.feature &&
                 std::abs(root.threshold - want.threshold) <= 1e-12,
             "stump on n=" + std::to_string(n));
    ++stumps;
  }
  c.note(std::to_string(stumps) + " stumps matched");
  // SVM dual feasibility and KKT.
  {
    Matrix x(200, 2);
    Labels y(200);
    std::normal_distribution<double> nd(0, 0.1);
    for (std::size_t r = 0; r < 200; ++r) {
      y[r] = r % 2;
      const double radius = (y[r] ? 0.5 : 1.3) + nd(rng), a = 0.0314 * static_cast<double>(r);
      x(r, 0) = radius * std::cos(a);
      x(r, 1) = radius * std::sin(a);
    }
    double worst = 0;
    for (double C : {0.5, 5.0}) {
      SvmConfig cfg;
      cfg.C = C;
      cfg.gamma = 1.0;
      const auto dual = solve_svm_dual(x, y, cfg);
      for (std::size_t i = 0; i < dual.alpha.size(); ++i)
        c.expect(dual.alpha[i] >= 0 && dual.alpha[i] <= dual.upper[i], "alpha outside [0, C]");
      worst = std::max(worst, svm_kkt_residual(x, y, dual, cfg.gamma));
    }
    c.expect(worst <= 1e-3, "svm KKT residual");
    c.note("svm KKT residual " + fmt(worst, 6));
  }
}

void explainability(Check& c) {
  std::mt19937_64 rng(8);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    GbdtModel m;
    m.base_score = std::uniform_real_distribution<double>(-1, 1)(rng);
    const int trees = 1 + static_cast<int>(rng() % 3);
    for (int t = 0; t < trees; ++t) m.trees.push_back(oracle::random_tree(rng, 3, 4));
    const Matrix bg = uniform_rows(rng, 1 + rng() % 8, 3);
    const Matrix xs = uniform_rows(rng, 1, 3);
    const auto x = xs.row(0);
    const auto inter = tree_shap(m, x, bg, ShapMode::kInterventional);
    const auto want_i = oracle::shapley(
        3, [&](unsigned mask) { return oracle::interventional_value(m, x, bg, mask); });
    const auto path = tree_shap(m, x, bg, ShapMode::kPathDependent);
    const auto want_p = oracle::shapley(
        3, [&](unsigned mask) { return oracle::path_dependent_value(m, x, mask); });
    for (int j = 0; j < 3; ++j) {
      worst = std::max({worst, std::abs(inter.values[j] - want_i[j]),
                        std::abs(path.values[j] - want_p[j])});
    }
  }
  c.expect(worst <= 1e-9, "tree_shap vs brute force");

  const Matrix x = uniform_rows(rng, 300, 6);
  Labels y(300);
  for (std::size_t r = 0; r < 300; ++r) y[r] = x(r, 0) + x(r, 1) * x(r, 2) > 0;
  GbdtConfig g;
  g.num_rounds = 40;
  const auto gbdt = fit_gbdt(x, y, g, FeatureMeta{1, kFeatureLayoutVersion});
  const auto lr = fit_logreg(x, y, {}, FeatureMeta{1, kFeatureLayoutVersion});
  const Matrix bg = sample_background(x, 100, 1);
  const auto means = column_means(bg);
  const Matrix inputs = uniform_rows(rng, 100, 6);
  double worst_local = 0;
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    for (const Attribution& a : {tree_shap(gbdt, inputs.row(r), bg),
                                 tree_shap(gbdt, inputs.row(r), bg, ShapMode::kPathDependent),
                                 linear_shap(lr, inputs.row(r), means)}) {
      double total = a.base_value;
      for (double v : a.values) total += v;
      worst_local = std::max(worst_local, std::abs(total - a.margin));
    }
    worst_local = std::max(worst_local, std::abs(tree_shap(gbdt, inputs.row(r), bg).margin -
                                                 gbdt.margin(inputs.row(r))));
  }
  c.expect(worst_local <= 1e-6, "local accuracy");
  c.note("max Shapley diff " + fmt(worst, 15) + ", max local accuracy gap " +
         fmt(worst_local, 15));
}

PipelineConfig benchmark_config(const fs::path& dir, ModelKind model) {
  PipelineConfig cfg;
  cfg.workdir = dir;
  cfg.w = 2;
  cfg.model = model;
  cfg.seed = 42;
  cfg.trials = 12;
  cfg.sgns.vector_size = 64;
  cfg.sgns.epochs = 20;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs synth -> embed -> features -> tune/train/eval and returns the report.
EvalSummary run_pipeline(const PipelineConfig& cfg, bool fresh) {
  if (fresh) {
    cmd_synth(cfg);
    cmd_embed(cfg);
    cmd_features(cfg);
  }
  return cmd_tune_train_eval(cfg);
}

std::string benchmark_report;

void synthetic_benchmark(Check& c, const fs::path& dir) {
  const auto gbdt_cfg = benchmark_config(dir, ModelKind::kGbdt);
  const auto syn = cmd_synth(gbdt_cfg);
  const double rate = static_cast<double>(syn.boundaries) / static_cast<double>(syn.gaps);
  c.expect(syn.annotated == 2000, "2000 annotated sessions");
  c.expect(rate > 0.09 && rate < 0.13, "positive rate near 11%");
  cmd_embed(gbdt_cfg);
  cmd_features(gbdt_cfg);
  const auto gbdt = cmd_tune_train_eval(gbdt_cfg);
  benchmark_report = slurp(gbdt_cfg.metrics_path());
  const auto lr = cmd_tune_train_eval(benchmark_config(dir, ModelKind::kLogreg));
  c.expect(gbdt.test.f1 >= 0.85, "GBDT F1 >= 0.85");
  c.expect(gbdt.test.f1 >= gbdt.baseline.best_f1 + 0.05, "GBDT beats baseline by 0.05");
  c.note("positive rate " + fmt(rate, 3) + "; GBDT F1 " + fmt(gbdt.test.f1) + " PR-AUC " +
         fmt(gbdt.test.pr_auc) + " ROC-AUC " + fmt(gbdt.test.roc_auc) +
         "; baseline best F1 " + fmt(gbdt.baseline.best_f1) + " ROC-AUC " +
         fmt(gbdt.baseline.roc_auc) + "; logreg F1 " + fmt(lr.test.f1) +
         (gbdt.test.f1 >= lr.test.f1 ? " (tree >= linear)" : " (tree < linear)"));
}

void determinism(Check& c, const fs::path& dir) {
  c.expect(!benchmark_report.empty(), "criterion 7 report missing");
  const auto cfg = benchmark_config(dir, ModelKind::kGbdt);
  run_pipeline(cfg, true);
  const std::string again = slurp(cfg.metrics_path());
  c.expect(again == benchmark_report, "metric reports differ");
  c.note(std::to_string(again.size()) + " bytes, fnv1a " + std::to_string(fnv1a64(again)));
}

}  // namespace

int main() {
  oracle::TempDir first, second;
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "formula oracles", 1, formula_oracles},
      {2, "feature dimensionality", 1, feature_dims},
      {3, "metric oracle equivalence", 5, metric_oracles},
      {4, "leakage", 5, leakage},
      {5, "model numerics", 30, model_numerics},
      {6, "explainability", 30, explainability},
      {7, "synthetic end-to-end benchmark", 300,
       [&](Check& c) { synthetic_benchmark(c, first.path()); }},
      {8, "determinism", 300, [&](Check& c) { determinism(c, second.path()); }},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    check.expect(secs <= cr.budget_s, "over the " + fmt(cr.budget_s, 0) + " s budget");
    failed += check.failed();
    std::printf("criterion %d %s: %s (%.2f s) %s\n", cr.id, cr.name,
                check.failed() ? "FAIL" : "PASS", secs, check.summary().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
