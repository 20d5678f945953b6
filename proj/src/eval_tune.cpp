#include "sessionseg/eval_tune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace sessionseg {

namespace {

void check_lengths(std::span<const int> y, std::span<const double> scores) {
  if (y.size() != scores.size()) {
    throw ValidationError("labels and scores differ in length");
  }
  if (y.empty()) throw ValidationError("metric on empty input");
  for (int v : y) {
    if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError("NaN score");
  }
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

Confusion confusion(std::span<const int> y, std::span<const double> scores,
                    double threshold) {
  check_lengths(y, scores);
  Confusion c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && y[i] == 1) ++c.tp;
    else if (pred) ++c.fp;
    else if (y[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(std::span<const int> y, std::span<const double> scores,
                double threshold) {
  const Confusion c = confusion(y, scores, threshold);
  const double precision = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

double roc_auc(std::span<const int> y, std::span<const double> scores) {
  check_lengths(y, scores);
  const std::size_t n = y.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average 1-based ranks within tie groups; ranks are kept doubled so they
  // stay integral.
  std::uint64_t positives = 0;
  std::uint64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const std::uint64_t doubled_avg = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (y[idx[k]] == 1) {
        ++positives;
        doubled_rank_sum += doubled_avg;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError("roc_auc needs both classes");
  }
  const double u = static_cast<double>(doubled_rank_sum - positives * (positives + 1)) / 2.0;
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

double pr_auc(std::span<const int> y, std::span<const double> scores) {
  check_lengths(y, scores);
  const std::size_t total_pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (total_pos == 0) throw ValidationError("pr_auc needs at least one positive");
  const auto idx = order_by_score_desc(scores);
  double ap = 0;
  std::size_t tp = 0, fp = 0, prev_tp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (y[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    if (tp > prev_tp) {
      const double precision = double(tp) / double(tp + fp);
      ap += double(tp - prev_tp) / double(total_pos) * precision;
      prev_tp = tp;
    }
    i = j;
  }
  return ap;
}

nlohmann::ordered_json MetricReport::to_json() const {
  return {{"threshold", threshold},
          {"f1", f1},
          {"pr_auc", pr_auc},
          {"roc_auc", roc_auc},
          {"tp", counts.tp},
          {"fp", counts.fp},
          {"fn", counts.fn},
          {"tn", counts.tn}};
}

MetricReport evaluate_scores(std::span<const int> y, std::span<const double> scores,
                             double threshold) {
  MetricReport r;
  r.threshold = threshold;
  r.counts = confusion(y, scores, threshold);
  r.f1 = f1_score(y, scores, threshold);
  r.roc_auc = roc_auc(y, scores);
  r.pr_auc = pr_auc(y, scores);
  return r;
}

MetricReport evaluate(const TrainedModel& model, const Matrix& x, const Labels& y,
                      double threshold) {
  if (x.cols() != model.feature_dim()) {
    throw ValidationError("test features have " + std::to_string(x.cols()) +
                          " columns, model expects " +
                          std::to_string(model.feature_dim()));
  }
  const auto scores = model.predict_proba(x);
  return evaluate_scores(y, scores, threshold);
}

std::vector<std::size_t> FoldPlan::train_rows(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] != fold) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::valid_rows(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] == fold) out.push_back(r);
  }
  return out;
}

FoldPlan group_kfold(std::span<const std::string> groups, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("group k-fold needs k >= 2");
  std::vector<std::string_view> distinct;
  std::unordered_map<std::string_view, std::size_t> group_index;
  std::vector<std::size_t> sizes;
  for (const auto& g : groups) {
    auto [it, inserted] = group_index.emplace(g, distinct.size());
    if (inserted) {
      distinct.push_back(g);
      sizes.push_back(0);
    }
    ++sizes[it->second];
  }
  if (distinct.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("group k-fold needs at least k=" + std::to_string(k) +
                          " groups, got " + std::to_string(distinct.size()));
  }
  std::vector<std::size_t> order(distinct.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<int> fold_of_group(distinct.size());
  std::vector<std::size_t> load(k, 0);
  for (auto g : order) {
    const auto f = static_cast<int>(std::min_element(load.begin(), load.end()) - load.begin());
    fold_of_group[g] = f;
    load[f] += sizes[g];
  }
  FoldPlan plan;
  plan.k = k;
  plan.fold_of_row.reserve(groups.size());
  for (const auto& g : groups) plan.fold_of_row.push_back(fold_of_group[group_index.at(g)]);
  return plan;
}

void SearchSpace::validate() const {
  if (params.empty()) throw ValidationError("empty search space");
  for (const auto& p : params) {
    if (!(p.lo < p.hi)) throw ValidationError("range for " + p.name + " needs lo < hi");
    if (p.scale == Scale::kLogUniform && !(p.lo > 0)) {
      throw ValidationError("log-uniform range for " + p.name + " needs lo > 0");
    }
  }
}

double param(const ParamSet& set, std::string_view name, double fallback) {
  for (const auto& [k, v] : set) {
    if (k == name) return v;
  }
  return fallback;
}

ParamSet sample_params(const SearchSpace& space, Rng& rng) {
  ParamSet out;
  for (const auto& p : space.params) {
    double v = 0;
    switch (p.scale) {
      case Scale::kLogUniform:
        v = std::exp(std::log(p.lo) + rng.uniform() * (std::log(p.hi) - std::log(p.lo)));
        v = std::clamp(v, p.lo, p.hi);
        break;
      case Scale::kUniform:
        v = p.lo + rng.uniform() * (p.hi - p.lo);
        break;
      case Scale::kUniformInt: {
        const auto lo = static_cast<long long>(std::ceil(p.lo));
        const auto hi = static_cast<long long>(std::floor(p.hi));
        v = static_cast<double>(lo + static_cast<long long>(rng.below(hi - lo + 1)));
        break;
      }
    }
    out.emplace_back(p.name, v);
  }
  return out;
}

SearchSpace leafwise_gbdt_space() {
  return {{{"learning_rate", Scale::kLogUniform, 1e-4, 0.1},
           {"feature_fraction", Scale::kUniform, 0.5, 1.0},
           {"lambda_l2", Scale::kLogUniform, 0.1, 10},
           {"num_leaves", Scale::kUniformInt, 4, 768},
           {"min_sum_hessian_in_leaf", Scale::kLogUniform, 1e-4, 100},
           {"bagging_fraction", Scale::kUniform, 0.5, 1.0}}};
}

SearchSpace levelwise_gbdt_space() {
  return {{{"learning_rate", Scale::kLogUniform, 1e-4, 0.1},
           {"colsample_bytree", Scale::kUniform, 0.5, 1.0},
           {"gamma", Scale::kLogUniform, 1e-3, 100},
           {"lambda", Scale::kLogUniform, 0.1, 10},
           {"max_depth", Scale::kUniformInt, 3, 14},
           {"min_child_weight", Scale::kLogUniform, 1e-4, 100},
           {"subsample", Scale::kUniform, 0.5, 1.0}}};
}

SearchSpace svm_space() {
  return {{{"C", Scale::kLogUniform, 1e-4, 10}, {"gamma", Scale::kLogUniform, 1e-4, 1}}};
}

SearchSpace logreg_space() { return {{{"C", Scale::kLogUniform, 1e-4, 10}}}; }

nlohmann::ordered_json TrialRecord::to_json() const {
  nlohmann::ordered_json p = nlohmann::ordered_json::object();
  for (const auto& [k, v] : params) p[k] = v;
  nlohmann::ordered_json j = {{"trial", index}, {"params", p}};
  if (failed) {
    j["status"] = "failed";
    j["error"] = error;
  } else {
    j["status"] = "ok";
    j["fold_f1"] = fold_f1;
    j["mean_f1"] = mean_f1;
  }
  return j;
}

SearchResult random_search(const SearchSpace& space, int trials,
                           const FoldPlan& folds, const Matrix& x,
                           const Labels& y, const Trainer& trainer,
                           std::uint64_t seed, double threshold,
                           std::ostream* trial_log) {
  space.validate();
  if (trials < 1) throw ValidationError("trials must be >= 1");
  if (folds.fold_of_row.size() != x.rows() || y.size() != x.rows()) {
    throw ValidationError("fold plan does not match the data");
  }
  // Slice the folds once; every trial reuses them.
  struct Slice {
    Matrix x_train, x_valid;
    Labels y_train, y_valid;
  };
  std::vector<Slice> slices(folds.k);
  for (int f = 0; f < folds.k; ++f) {
    const auto tr = folds.train_rows(f);
    const auto va = folds.valid_rows(f);
    slices[f].x_train = x.select_rows(tr);
    slices[f].x_valid = x.select_rows(va);
    for (auto r : tr) slices[f].y_train.push_back(y[r]);
    for (auto r : va) slices[f].y_valid.push_back(y[r]);
  }

  Rng rng(seed);
  SearchResult result;
  bool any_ok = false;
  for (int t = 0; t < trials; ++t) {
    TrialRecord rec;
    rec.index = static_cast<std::size_t>(t);
    rec.params = sample_params(space, rng);
    try {
      for (const auto& s : slices) {
        const auto probs = trainer(rec.params, s.x_train, s.y_train, s.x_valid);
        rec.fold_f1.push_back(f1_score(s.y_valid, probs, threshold));
      }
      rec.mean_f1 = std::accumulate(rec.fold_f1.begin(), rec.fold_f1.end(), 0.0) /
                    static_cast<double>(rec.fold_f1.size());
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
      rec.fold_f1.clear();
    }
    if (!rec.failed && (!any_ok || rec.mean_f1 > result.best_score)) {
      any_ok = true;
      result.best_score = rec.mean_f1;
      result.best_trial = rec.index;
      result.best_params = rec.params;
    }
    if (trial_log) *trial_log << rec.to_json().dump() << '\n';
    result.trials.push_back(std::move(rec));
  }
  if (!any_ok) throw Error("every search trial failed");
  return result;
}

}  // namespace sessionseg
