#include "sessionseg/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "sessionseg/eval_tune.hpp"
#include "sessionseg/features.hpp"

namespace sessionseg {

void BaselineConfig::validate() const {
  if (!(threshold >= -1.0 && threshold <= 1.0)) {
    throw ValidationError("baseline threshold must lie in [-1, 1]");
  }
}

BaselineScores baseline_scores(const Session& session, const EmbeddingTable& table) {
  if (session.items.size() < 2) {
    throw ValidationError("session " + session.session_id + " has no gaps");
  }
  BaselineScores out;
  const std::size_t gaps = session.gap_count();
  out.cosine.reserve(gaps);
  out.score.reserve(gaps);
  out.oov.reserve(gaps);
  for (std::size_t g = 0; g < gaps; ++g) {
    const auto a = table.lookup(session.items[g]);
    const auto b = table.lookup(session.items[g + 1]);
    const bool missing = !a || !b;
    const double c = missing ? 0.0 : cosine(*a, *b);
    out.cosine.push_back(c);
    out.score.push_back(std::clamp(1.0 - c, 0.0, 2.0));
    out.oov.push_back(missing);
  }
  return out;
}

std::vector<int> baseline_segment(const Session& session, const EmbeddingTable& table,
                                  const BaselineConfig& cfg) {
  cfg.validate();
  const auto s = baseline_scores(session, table);
  std::vector<int> labels(s.cosine.size());
  for (std::size_t g = 0; g < labels.size(); ++g) {
    labels[g] = cfg.inverted ? s.cosine[g] > cfg.threshold : s.cosine[g] < cfg.threshold;
  }
  return labels;
}

namespace {

double f1_from(const Confusion& c) {
  const double denom = 2.0 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * c.tp / denom;
}

}  // namespace

BaselineReport baseline_report(std::span<const AnnotatedSession> annotated,
                               const EmbeddingTable& table,
                               std::span<const double> thresholds) {
  BaselineReport report;
  std::vector<int> y;
  std::vector<double> cos;
  std::vector<double> score;
  for (const auto& a : annotated) {
    if (a.session.items.size() < 2) continue;
    validate(a);
    const auto s = baseline_scores(a.session, table);
    for (std::size_t g = 0; g < s.score.size(); ++g) {
      y.push_back(a.gap_labels[g]);
      cos.push_back(s.cosine[g]);
      score.push_back(s.score[g]);
      report.oov_gaps += s.oov[g];
    }
  }
  report.gaps = y.size();
  if (y.empty()) throw ValidationError("no gaps to evaluate the baseline on");
  report.roc_auc = roc_auc(y, score);
  report.pr_auc = pr_auc(y, score);

  Confusion c;
  for (double t : thresholds) {
    c = {};
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool pred = cos[i] < t;
      if (pred && y[i]) ++c.tp;
      else if (pred) ++c.fp;
      else if (y[i]) ++c.fn;
      else ++c.tn;
    }
    report.sweep.push_back({t, f1_from(c)});
  }

  // Exact best cutoff: walk gaps by ascending cosine, predicting boundaries
  // for every gap up to each distinct value.
  std::vector<std::size_t> order(y.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cos[a] < cos[b]; });
  const auto total_pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  c = {0, 0, total_pos, y.size() - total_pos};
  report.best_f1 = 0;
  report.best_threshold = -1;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    if (y[i]) { ++c.tp; --c.fn; } else { ++c.fp; --c.tn; }
    if (k + 1 < order.size() && cos[order[k + 1]] == cos[i]) continue;
    const double f = f1_from(c);
    if (f > report.best_f1) {
      report.best_f1 = f;
      report.best_threshold = k + 1 < order.size() ? (cos[i] + cos[order[k + 1]]) / 2
                                                   : std::nextafter(cos[i], 2.0);
    }
  }
  return report;
}

std::vector<double> threshold_grid(double step) {
  if (!(step > 0 && step <= 2)) throw ValidationError("grid step must lie in (0, 2]");
  std::vector<double> grid;
  const auto n = static_cast<int>(std::floor(2.0 / step + 1e-9));
  for (int i = 0; i <= n; ++i) {
    grid.push_back(std::min(1.0, std::round((-1.0 + i * step) * 1e9) / 1e9));
  }
  if (grid.back() < 1.0) grid.push_back(1.0);
  return grid;
}

void write_sweep(std::ostream& out, const BaselineReport& report) {
  out << "threshold,f1,pr_auc,roc_auc\n";
  for (const auto& row : report.sweep) {
    out << format_double(row.threshold) << ',' << format_double(row.f1) << ','
        << format_double(report.pr_auc) << ',' << format_double(report.roc_auc) << '\n';
  }
}

}  // namespace sessionseg
