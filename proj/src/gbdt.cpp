#include "sessionseg/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sessionseg {

namespace {

struct HistBin {
  double g = 0;
  double h = 0;
  std::uint32_t n = 0;
};

struct Split {
  double gain = -std::numeric_limits<double>::infinity();
  int feature = -1;
  int bin = -1;
};

struct Open {
  int node;
  int depth;
  std::vector<std::size_t> rows;
  std::vector<HistBin> hist;
  double g = 0;
  double h = 0;
  Split best;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::uint16_t>& bins, std::size_t dim,
              const std::vector<FeatureBins>& feature_bins,
              const std::vector<double>& grad, const std::vector<double>& hess,
              const GbdtConfig& cfg, std::vector<int> features)
      : bins_(bins), dim_(dim), feature_bins_(feature_bins), grad_(grad),
        hess_(hess), cfg_(cfg), features_(std::move(features)) {
    offsets_.resize(dim_ + 1, 0);
    for (std::size_t f = 0; f < dim_; ++f) {
      offsets_[f + 1] = offsets_[f] + feature_bins_[f].upper.size();
    }
  }

  Tree build(std::vector<std::size_t> rows) {
    Tree tree;
    tree.nodes.emplace_back();
    Open root{0, 0, std::move(rows), {}, 0, 0, {}};
    root.hist = histogram(root.rows);
    for (auto r : root.rows) {
      root.g += grad_[r];
      root.h += hess_[r];
    }
    finalize(tree, root);
    std::vector<Open> open;
    open.push_back(std::move(root));
    std::size_t leaves = 1;
    const bool leaf_wise = cfg_.growth == Growth::kLeafWise;
    while (!open.empty()) {
      if (leaf_wise && leaves >= static_cast<std::size_t>(cfg_.num_leaves)) break;
      std::size_t pick = 0;
      if (leaf_wise) {
        for (std::size_t i = 1; i < open.size(); ++i) {
          if (open[i].best.gain > open[pick].best.gain) pick = i;
        }
      }
      Open cur = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      if (cur.best.feature < 0) {
        if (leaf_wise) break;  // best remaining leaf cannot split
        continue;
      }
      auto [left, right] = split(tree, cur);
      ++leaves;
      open.push_back(std::move(left));
      open.push_back(std::move(right));
    }
    return tree;
  }

 private:
  std::vector<HistBin> histogram(const std::vector<std::size_t>& rows) const {
    std::vector<HistBin> hist(offsets_.back());
    for (auto r : rows) {
      const std::uint16_t* row_bins = bins_.data() + r * dim_;
      const double g = grad_[r], h = hess_[r];
      for (int f : features_) {
        HistBin& b = hist[offsets_[f] + row_bins[f]];
        b.g += g;
        b.h += h;
        ++b.n;
      }
    }
    return hist;
  }

  bool can_split(const Open& node) const {
    if (node.rows.size() < 2) return false;
    if (cfg_.max_depth > 0 && node.depth >= cfg_.max_depth) return false;
    return true;
  }

  double score(double g, double h) const { return g * g / (h + cfg_.l2_lambda); }

  Split best_split(const Open& node) const {
    Split best;
    if (!can_split(node)) return best;
    const double parent = score(node.g, node.h);
    for (int f : features_) {
      const std::size_t nb = feature_bins_[f].upper.size();
      double gl = 0, hl = 0;
      std::uint32_t nl = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        const HistBin& bin = node.hist[offsets_[f] + b];
        gl += bin.g;
        hl += bin.h;
        nl += bin.n;
        if (nl == 0) continue;
        const std::uint32_t nr = static_cast<std::uint32_t>(node.rows.size()) - nl;
        if (nr == 0) break;
        const double gr = node.g - gl, hr = node.h - hl;
        if (hl < cfg_.min_child_hessian || hr < cfg_.min_child_hessian) continue;
        const double gain = 0.5 * (score(gl, hl) + score(gr, hr) - parent) - cfg_.gamma;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = f;
          best.bin = static_cast<int>(b);
        }
      }
    }
    if (!(best.gain > 0)) return Split{};
    return best;
  }

  void finalize(Tree& tree, Open& node) {
    TreeNode& t = tree.nodes[node.node];
    t.value = -node.g / (node.h + cfg_.l2_lambda) * cfg_.learning_rate;
    t.cover = static_cast<double>(node.rows.size());
    node.best = best_split(node);
  }

  std::pair<Open, Open> split(Tree& tree, Open& parent) {
    const int f = parent.best.feature;
    const auto b = static_cast<std::uint16_t>(parent.best.bin);
    Open left{static_cast<int>(tree.nodes.size()), parent.depth + 1, {}, {}, 0, 0, {}};
    Open right{left.node + 1, parent.depth + 1, {}, {}, 0, 0, {}};
    for (auto r : parent.rows) {
      Open& side = bins_[r * dim_ + f] <= b ? left : right;
      side.rows.push_back(r);
      side.g += grad_[r];
      side.h += hess_[r];
    }
    Open& small = left.rows.size() <= right.rows.size() ? left : right;
    Open& large = &small == &left ? right : left;
    small.hist = histogram(small.rows);
    large.hist = std::move(parent.hist);
    for (std::size_t i = 0; i < large.hist.size(); ++i) {
      large.hist[i].g -= small.hist[i].g;
      large.hist[i].h -= small.hist[i].h;
      large.hist[i].n -= small.hist[i].n;
    }
    {
      TreeNode& p = tree.nodes[parent.node];
      p.feature = f;
      p.threshold = feature_bins_[f].upper[b];
      p.left = left.node;
      p.right = right.node;
    }
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    finalize(tree, left);
    finalize(tree, right);
    return {std::move(left), std::move(right)};
  }

  const std::vector<std::uint16_t>& bins_;
  std::size_t dim_;
  const std::vector<FeatureBins>& feature_bins_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const GbdtConfig& cfg_;
  std::vector<int> features_;
  std::vector<std::size_t> offsets_;
};

double logistic_loss(double margin, int y) {
  // log(1 + exp(-m)) for y = 1, log(1 + exp(m)) for y = 0.
  const double z = y == 1 ? -margin : margin;
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

void GbdtConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be >= 0");
  }
  if (num_rounds < 0) throw ValidationError("num_rounds must be >= 0");
  if (growth == Growth::kLeafWise && num_leaves < 2) {
    throw ValidationError("num_leaves must be >= 2");
  }
  if (growth == Growth::kLevelWise && max_depth < 1) {
    throw ValidationError("max_depth must be >= 1 for level-wise growth");
  }
  if (!(feature_fraction > 0 && feature_fraction <= 1) ||
      !(bagging_fraction > 0 && bagging_fraction <= 1)) {
    throw ValidationError("sampling fractions must lie in (0, 1]");
  }
  if (!(l2_lambda >= 0) || !(min_child_hessian >= 0) || !(gamma >= 0)) {
    throw ValidationError("regularization parameters must be >= 0");
  }
  if (max_bins < 2 || max_bins > 65535) {
    throw ValidationError("max_bins must lie in [2, 65535]");
  }
  if (!(pos_weight > 0)) throw ValidationError("pos_weight must be > 0");
}

std::uint16_t FeatureBins::bin(double v) const {
  auto it = std::lower_bound(upper.begin(), upper.end(), v);
  if (it == upper.end()) --it;
  return static_cast<std::uint16_t>(it - upper.begin());
}

std::vector<FeatureBins> make_bins(const Matrix& x, int max_bins) {
  std::vector<FeatureBins> out(x.cols());
  std::vector<double> values(x.rows());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    for (std::size_t r = 0; r < x.rows(); ++r) values[r] = x(r, f);
    std::sort(values.begin(), values.end());
    std::vector<double> distinct;
    std::vector<std::size_t> counts;
    for (double v : values) {
      if (distinct.empty() || v != distinct.back()) {
        distinct.push_back(v);
        counts.push_back(0);
      }
      ++counts.back();
    }
    auto& upper = out[f].upper;
    if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        upper.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2);
      }
    } else {
      // Equal-frequency cuts placed between distinct values.
      const double per_bin = static_cast<double>(values.size()) / max_bins;
      double acc = 0;
      double next_cut = per_bin;
      for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        acc += static_cast<double>(counts[i]);
        if (acc >= next_cut &&
            upper.size() + 1 < static_cast<std::size_t>(max_bins)) {
          upper.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2);
          while (next_cut <= acc) next_cut += per_bin;
        }
      }
    }
    upper.push_back(std::numeric_limits<double>::infinity());
  }
  return out;
}

double Tree::predict(std::span<const double> x) const {
  return nodes[leaf_index(x)].value;
}

int Tree::leaf_index(std::span<const double> x) const {
  int i = 0;
  while (!nodes[i].is_leaf()) {
    i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return i;
}

int Tree::depth() const {
  std::vector<int> depth(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    depth[nodes[i].left] = depth[nodes[i].right] = depth[i] + 1;
    best = std::max(best, depth[i] + 1);
  }
  return best;
}

std::size_t Tree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

double GbdtModel::margin(std::span<const double> x) const {
  double m = base_score;
  for (const auto& t : trees) m += t.predict(x);
  return m;
}

GbdtModel train_gbdt(const Matrix& x, const Labels& y, const GbdtConfig& cfg,
                     GbdtTrainingLog* log) {
  cfg.validate();
  check_training_data(x, y);
  const std::size_t n = x.rows(), dim = x.cols();
  if (dim == 0) throw ValidationError("no features");

  const auto feature_bins = make_bins(x, cfg.max_bins);
  std::vector<std::uint16_t> bins(n * dim);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < dim; ++f) bins[r * dim + f] = feature_bins[f].bin(x(r, f));
  }

  std::vector<double> weight(n);
  double wpos = 0, wneg = 0;
  for (std::size_t r = 0; r < n; ++r) {
    weight[r] = y[r] == 1 ? cfg.pos_weight : 1.0;
    (y[r] == 1 ? wpos : wneg) += weight[r];
  }
  GbdtModel model;
  model.base_score = std::log(wpos / wneg);

  std::vector<double> margin(n, model.base_score);
  auto mean_loss = [&] {
    double total = 0;
    for (std::size_t r = 0; r < n; ++r) total += weight[r] * logistic_loss(margin[r], y[r]);
    return total / (wpos + wneg);
  };
  GbdtTrainingLog local;
  local.loss.push_back(mean_loss());

  Rng rng(cfg.seed);
  std::vector<double> grad(n), hess(n);
  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  std::vector<int> all_features(dim);
  std::iota(all_features.begin(), all_features.end(), 0);

  for (int round = 0; round < cfg.num_rounds; ++round) {
    for (std::size_t r = 0; r < n; ++r) {
      const double p = sigmoid(margin[r]);
      grad[r] = weight[r] * (p - y[r]);
      hess[r] = weight[r] * std::max(p * (1 - p), 1e-16);
    }
    std::vector<std::size_t> rows = all_rows;
    if (cfg.bagging_fraction < 1.0) {
      rng.shuffle(rows);
      const auto keep = std::max<std::size_t>(
          2, static_cast<std::size_t>(std::llround(cfg.bagging_fraction * n)));
      rows.resize(std::min(keep, n));
      std::sort(rows.begin(), rows.end());
    }
    std::vector<int> features = all_features;
    if (cfg.feature_fraction < 1.0) {
      rng.shuffle(features);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(cfg.feature_fraction * dim)));
      features.resize(std::min(keep, dim));
      std::sort(features.begin(), features.end());
    }
    TreeBuilder builder(bins, dim, feature_bins, grad, hess, cfg, std::move(features));
    Tree tree = builder.build(std::move(rows));
    for (std::size_t r = 0; r < n; ++r) margin[r] += tree.predict(x.row(r));
    model.trees.push_back(std::move(tree));
    local.loss.push_back(mean_loss());
  }
  if (log) *log = std::move(local);
  return model;
}

}  // namespace sessionseg
