#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "sessionseg/behavior_embed.hpp"
#include "sessionseg/corpus.hpp"

namespace sessionseg {

struct BaselineConfig {
  double threshold = 0.5;
  // false: a gap is a boundary when the adjacent cosine is below the
  // threshold. true: when it is above.
  bool inverted = false;

  void validate() const;  // threshold must lie in [-1, 1]
};

struct BaselineScores {
  std::vector<double> cosine;  // adjacent-item cosine per gap, 0 when OOV
  std::vector<double> score;   // 1 - cosine, in [0, 2]; higher = boundary
  std::vector<bool> oov;       // either adjacent item lacks an embedding
};

// Throws ValidationError for sessions with fewer than two items.
BaselineScores baseline_scores(const Session& session, const EmbeddingTable& table);

std::vector<int> baseline_segment(const Session& session, const EmbeddingTable& table,
                                  const BaselineConfig& cfg);

struct SweepRow {
  double threshold = 0;
  double f1 = 0;
};

struct BaselineReport {
  double roc_auc = 0;
  double pr_auc = 0;
  std::size_t gaps = 0;
  std::size_t oov_gaps = 0;
  std::vector<SweepRow> sweep;
  // Best F1 over every distinct cutoff, not just the sweep grid.
  double best_threshold = 0;
  double best_f1 = 0;
};

// Scores every gap of the annotated sessions (sessions with one item are
// skipped) and evaluates the default direction at each threshold.
BaselineReport baseline_report(std::span<const AnnotatedSession> annotated,
                               const EmbeddingTable& table,
                               std::span<const double> thresholds);

// -1, -1 + step, ..., 1.
std::vector<double> threshold_grid(double step = 0.05);

// CSV: threshold,f1,pr_auc,roc_auc
void write_sweep(std::ostream& out, const BaselineReport& report);

}  // namespace sessionseg
