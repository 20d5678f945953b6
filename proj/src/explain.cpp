#include "sessionseg/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "sessionseg/csv.hpp"
#include "sessionseg/features.hpp"

namespace sessionseg {

namespace {

// (a-1)! b! / (a+b)!: the Shapley weight mass of coalitions that contain a
// fixed set of a "foreground" features (one of them the player) and exclude a
// fixed set of b "background" features.
double coalition_weight(int a, int b) {
  return std::exp(std::lgamma(a) + std::lgamma(b + 1.0) - std::lgamma(a + b + 1.0));
}

class InterventionalWalker {
 public:
  InterventionalWalker(const Tree& tree, std::span<const double> x,
                       std::span<const double> z, std::vector<double>& phi)
      : tree_(tree), x_(x), z_(z), phi_(phi), state_(x.size(), 0) {}

  void run() { visit(0); }

 private:
  void visit(int node) {
    const TreeNode& n = tree_.nodes[node];
    if (n.is_leaf()) {
      const int a = static_cast<int>(from_x_.size());
      const int b = static_cast<int>(from_z_.size());
      if (a > 0) {
        const double wa = n.value * coalition_weight(a, b);
        for (int f : from_x_) phi_[f] += wa;
      }
      if (b > 0) {
        const double wb = n.value * coalition_weight(b, a);
        for (int f : from_z_) phi_[f] -= wb;
      }
      return;
    }
    const int f = n.feature;
    const int x_child = x_[f] <= n.threshold ? n.left : n.right;
    const int z_child = z_[f] <= n.threshold ? n.left : n.right;
    if (x_child == z_child) {
      visit(x_child);
    } else if (state_[f] == 1) {
      visit(x_child);
    } else if (state_[f] == 2) {
      visit(z_child);
    } else {
      state_[f] = 1;
      from_x_.push_back(f);
      visit(x_child);
      from_x_.pop_back();
      state_[f] = 2;
      from_z_.push_back(f);
      visit(z_child);
      from_z_.pop_back();
      state_[f] = 0;
    }
  }

  const Tree& tree_;
  std::span<const double> x_;
  std::span<const double> z_;
  std::vector<double>& phi_;
  std::vector<char> state_;  // 0 unseen, 1 follows x, 2 follows z
  std::vector<int> from_x_;
  std::vector<int> from_z_;
};

struct PathElement {
  int feature;
  double zero_fraction;
  double one_fraction;
  double weight;
};

using Path = std::vector<PathElement>;

void extend_path(Path& path, double zero_fraction, double one_fraction, int feature) {
  const auto depth = static_cast<int>(path.size());
  path.push_back({feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0});
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].weight += one_fraction * path[i].weight * (i + 1) / (depth + 1);
    path[i].weight = zero_fraction * path[i].weight * (depth - i) / (depth + 1);
  }
}

void unwind_path(Path& path, int index) {
  const int depth = static_cast<int>(path.size()) - 1;
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = path[i].weight;
      path[i].weight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].weight * zero * (depth - i) / (depth + 1);
    } else {
      path[i].weight = path[i].weight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
  path.pop_back();
}

double unwound_sum(const Path& path, int index) {
  const int depth = static_cast<int>(path.size()) - 1;
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  double total = 0;
  if (one != 0) {
    for (int i = depth - 1; i >= 0; --i) {
      const double tmp = next / ((i + 1) * one);
      total += tmp;
      next = path[i].weight - tmp * zero * (depth - i);
    }
  } else {
    for (int i = depth - 1; i >= 0; --i) {
      total += path[i].weight / (zero * (depth - i));
    }
  }
  return total * (depth + 1);
}

void path_dependent(const Tree& tree, std::span<const double> x, int node,
                    Path path, double zero_fraction, double one_fraction,
                    int feature, std::vector<double>& phi) {
  extend_path(path, zero_fraction, one_fraction, feature);
  const TreeNode& n = tree.nodes[node];
  if (n.is_leaf()) {
    for (int i = 1; i < static_cast<int>(path.size()); ++i) {
      const double w = unwound_sum(path, i);
      phi[path[i].feature] += w * (path[i].one_fraction - path[i].zero_fraction) * n.value;
    }
    return;
  }
  const int hot = x[n.feature] <= n.threshold ? n.left : n.right;
  const int cold = hot == n.left ? n.right : n.left;
  double incoming_zero = 1.0, incoming_one = 1.0;
  for (int k = 1; k < static_cast<int>(path.size()); ++k) {
    if (path[k].feature == n.feature) {
      incoming_zero = path[k].zero_fraction;
      incoming_one = path[k].one_fraction;
      unwind_path(path, k);
      break;
    }
  }
  const double cover = n.cover;
  const auto share = [&](int child) {
    return cover > 0 ? tree.nodes[child].cover / cover : 0.5;
  };
  path_dependent(tree, x, hot, path, incoming_zero * share(hot), incoming_one,
                 n.feature, phi);
  path_dependent(tree, x, cold, path, incoming_zero * share(cold), 0.0,
                 n.feature, phi);
}

double expected_value(const Tree& tree, int node) {
  const TreeNode& n = tree.nodes[node];
  if (n.is_leaf()) return n.value;
  const double l = tree.nodes[n.left].cover, r = tree.nodes[n.right].cover;
  const double total = l + r;
  const double wl = total > 0 ? l / total : 0.5;
  return wl * expected_value(tree, n.left) + (1 - wl) * expected_value(tree, n.right);
}

}  // namespace

Attribution tree_shap(const GbdtModel& model, std::span<const double> x,
                      const Matrix& background, ShapMode mode) {
  Attribution out;
  out.values.assign(x.size(), 0.0);
  out.margin = model.margin(x);
  if (mode == ShapMode::kInterventional) {
    if (background.rows() == 0) {
      throw ValidationError("interventional tree_shap needs a background set");
    }
    if (background.cols() != x.size()) {
      throw ValidationError("background width does not match the input");
    }
    double base = 0;
    for (std::size_t r = 0; r < background.rows(); ++r) {
      const auto z = background.row(r);
      base += model.margin(z);
      for (const auto& tree : model.trees) {
        InterventionalWalker(tree, x, z, out.values).run();
      }
    }
    const double n = static_cast<double>(background.rows());
    for (double& v : out.values) v /= n;
    out.base_value = base / n;
  } else {
    double base = model.base_score;
    for (const auto& tree : model.trees) {
      base += expected_value(tree, 0);
      path_dependent(tree, x, 0, {}, 1.0, 1.0, -1, out.values);
    }
    out.base_value = base;
  }
  return out;
}

Attribution tree_shap(const TrainedModel& model, std::span<const double> x,
                      const Matrix& background, ShapMode mode) {
  if (model.kind() != ModelKind::kGbdt) {
    throw ValidationError("tree_shap requires a gbdt model; use linear_shap for " +
                          std::string(to_string(model.kind())));
  }
  if (x.size() != model.feature_dim()) {
    throw ValidationError("input width does not match the model");
  }
  return tree_shap(model.gbdt(), x, background, mode);
}

Attribution linear_shap(const TrainedModel& model, std::span<const double> x,
                        std::span<const double> background_mean) {
  if (x.size() != model.feature_dim() || background_mean.size() != x.size()) {
    throw ValidationError("linear_shap: input width does not match the model");
  }
  Attribution out;
  out.values.assign(x.size(), 0.0);
  switch (model.kind()) {
    case ModelKind::kLogreg: {
      const auto& lr = model.logreg();
      for (std::size_t j = 0; j < x.size(); ++j) {
        out.values[j] = lr.weights[j] * (x[j] - background_mean[j]);
      }
      out.base_value = lr.margin(background_mean);
      out.margin = lr.margin(x);
      break;
    }
    case ModelKind::kSvm: {
      const auto& svm = model.svm();
      // d/dx of -(A f(x) + B), f(x) = sum_i c_i exp(-g |x - s_i|^2) - rho.
      std::vector<double> grad(x.size(), 0.0);
      for (std::size_t i = 0; i < svm.support.rows(); ++i) {
        const auto s = svm.support.row(i);
        const double k = svm.coef[i] * rbf_kernel(s, x, svm.gamma);
        for (std::size_t j = 0; j < x.size(); ++j) {
          grad[j] += k * -2.0 * svm.gamma * (x[j] - s[j]);
        }
      }
      for (std::size_t j = 0; j < x.size(); ++j) {
        out.values[j] = -svm.platt_a * grad[j] * (x[j] - background_mean[j]);
      }
      out.base_value = svm.margin(background_mean);
      out.margin = svm.margin(x);
      out.approximate = true;
      break;
    }
    case ModelKind::kGbdt:
      throw ValidationError("linear_shap does not apply to gbdt models; use tree_shap");
  }
  return out;
}

Matrix sample_background(const Matrix& x, std::size_t rows, std::uint64_t seed) {
  std::vector<std::size_t> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  if (rows < idx.size()) {
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(rows);
    std::sort(idx.begin(), idx.end());
  }
  return x.select_rows(idx);
}

std::vector<double> column_means(const Matrix& x) {
  std::vector<double> m(x.cols(), 0.0);
  if (x.rows() == 0) return m;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) m[c] += row[c];
  }
  for (double& v : m) v /= static_cast<double>(x.rows());
  return m;
}

ImportanceReport aggregate_importance(std::span<const Attribution> attributions,
                                      int w) {
  if (attributions.empty()) throw ValidationError("no attributions to aggregate");
  const std::size_t dim = feature_dim(w);
  std::vector<double> sum(dim, 0.0);
  ImportanceReport report;
  report.w = w;
  for (const auto& a : attributions) {
    if (a.values.size() != dim) {
      throw ValidationError("attribution has " + std::to_string(a.values.size()) +
                            " values, expected " + std::to_string(dim) + " for w=" +
                            std::to_string(w));
    }
    for (std::size_t j = 0; j < dim; ++j) sum[j] += std::abs(a.values[j]);
    report.approximate = report.approximate || a.approximate;
  }
  for (std::size_t j = 0; j < dim; ++j) {
    report.ranked.push_back(
        {j, feature_label(j, w), sum[j] / static_cast<double>(attributions.size())});
  }
  std::stable_sort(report.ranked.begin(), report.ranked.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) {
                     return a.mean_abs > b.mean_abs;
                   });
  return report;
}

void write_importance(std::ostream& out, const ImportanceReport& report) {
  out << "rank,feature_index,label,mean_abs_shap\n";
  for (std::size_t i = 0; i < report.ranked.size(); ++i) {
    const auto& e = report.ranked[i];
    out << i + 1 << ',' << e.feature << ',' << csv::escape(e.label) << ','
        << format_double(e.mean_abs) << '\n';
  }
}

}  // namespace sessionseg
