#include "sessionseg/models.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace sessionseg {

namespace {

using nlohmann::json;

constexpr const char* kModelFormat = "sessionseg-model";
constexpr int kModelVersion = 1;

json tree_to_json(const Tree& tree) {
  json feature = json::array(), threshold = json::array(), left = json::array(),
       right = json::array(), value = json::array(), cover = json::array();
  for (const auto& n : tree.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    value.push_back(n.value);
    cover.push_back(n.cover);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left},
          {"right", right},     {"value", value},         {"cover", cover}};
}

Tree tree_from_json(const json& j, std::size_t feature_dim) {
  const auto feature = j.at("feature").get<std::vector<int>>();
  const auto threshold = j.at("threshold").get<std::vector<double>>();
  const auto left = j.at("left").get<std::vector<int>>();
  const auto right = j.at("right").get<std::vector<int>>();
  const auto value = j.at("value").get<std::vector<double>>();
  const auto cover = j.at("cover").get<std::vector<double>>();
  const std::size_t n = feature.size();
  if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n ||
      value.size() != n || cover.size() != n) {
    throw ValidationError("malformed tree in model file");
  }
  Tree t;
  t.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = t.nodes[i];
    node = {feature[i], threshold[i], left[i], right[i], value[i], cover[i]};
    if (node.is_leaf()) continue;
    const auto in_range = [&](int c) {
      return c > static_cast<int>(i) && c < static_cast<int>(n);
    };
    if (static_cast<std::size_t>(node.feature) >= feature_dim ||
        !in_range(node.left) || !in_range(node.right)) {
      throw ValidationError("malformed tree node in model file");
    }
  }
  return t;
}

json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw ValidationError("malformed matrix in model file");
  Matrix m(0, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    m.append_row(std::span<const double>(data.data() + r * cols, cols));
  }
  return m;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kGbdt: return "gbdt";
    case ModelKind::kLogreg: return "logreg";
    case ModelKind::kSvm: return "svm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "gbdt") return ModelKind::kGbdt;
  if (name == "logreg") return ModelKind::kLogreg;
  if (name == "svm") return ModelKind::kSvm;
  throw ValidationError("unknown model kind '" + std::string(name) + "'");
}

TrainedModel::TrainedModel(Params params, std::size_t feature_dim, FeatureMeta meta)
    : params_(std::move(params)), feature_dim_(feature_dim), meta_(meta) {}

ModelKind TrainedModel::kind() const {
  return static_cast<ModelKind>(params_.index());
}

double TrainedModel::margin(std::span<const double> x) const {
  if (x.size() != feature_dim_) {
    throw ValidationError("input has " + std::to_string(x.size()) +
                          " features, model expects " + std::to_string(feature_dim_));
  }
  return std::visit([&](const auto& m) { return m.margin(x); }, params_);
}

double TrainedModel::predict_proba(std::span<const double> x) const {
  return sigmoid(margin(x));
}

std::vector<double> TrainedModel::predict_proba(const Matrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict_proba(x.row(r));
  return out;
}

TrainedModel fit_gbdt(const Matrix& x, const Labels& y, const GbdtConfig& cfg,
                      FeatureMeta meta, GbdtTrainingLog* log) {
  return TrainedModel(train_gbdt(x, y, cfg, log), x.cols(), meta);
}

TrainedModel fit_logreg(const Matrix& x, const Labels& y,
                        const LogregConfig& cfg, FeatureMeta meta) {
  return TrainedModel(train_logreg(x, y, cfg), x.cols(), meta);
}

TrainedModel fit_svm(const Matrix& x, const Labels& y, const SvmConfig& cfg,
                     FeatureMeta meta) {
  return TrainedModel(train_svm(x, y, cfg), x.cols(), meta);
}

void save_model(const TrainedModel& model, std::ostream& out) {
  json params;
  switch (model.kind()) {
    case ModelKind::kGbdt: {
      const auto& g = model.gbdt();
      json trees = json::array();
      for (const auto& t : g.trees) trees.push_back(tree_to_json(t));
      params = {{"base_score", g.base_score}, {"trees", trees}};
      break;
    }
    case ModelKind::kLogreg: {
      const auto& l = model.logreg();
      params = {{"weights", l.weights}, {"bias", l.bias}};
      break;
    }
    case ModelKind::kSvm: {
      const auto& s = model.svm();
      params = {{"gamma", s.gamma},     {"support", matrix_to_json(s.support)},
                {"coef", s.coef},       {"rho", s.rho},
                {"platt_a", s.platt_a}, {"platt_b", s.platt_b}};
      break;
    }
  }
  const json doc = {{"format", kModelFormat},
                    {"version", kModelVersion},
                    {"kind", to_string(model.kind())},
                    {"feature_dim", model.feature_dim()},
                    {"w", model.meta().w},
                    {"layout_version", model.meta().layout_version},
                    {"params", params}};
  out << doc.dump() << '\n';
  if (!out) throw Error("failed writing model");
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_model(model, out);
}

TrainedModel load_model(std::istream& in, std::optional<FeatureMeta> expected) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corrupt model file: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kModelFormat) {
      throw ValidationError("not a model file");
    }
    const int version = doc.at("version").get<int>();
    if (version != kModelVersion) {
      throw ValidationError("unsupported model version " + std::to_string(version));
    }
    const auto kind = parse_model_kind(doc.at("kind").get<std::string>());
    const auto dim = doc.at("feature_dim").get<std::size_t>();
    const FeatureMeta meta{doc.at("w").get<int>(), doc.at("layout_version").get<int>()};
    const json& p = doc.at("params");
    std::optional<TrainedModel> model;
    switch (kind) {
      case ModelKind::kGbdt: {
        GbdtModel g;
        g.base_score = p.at("base_score").get<double>();
        for (const auto& t : p.at("trees")) g.trees.push_back(tree_from_json(t, dim));
        model.emplace(std::move(g), dim, meta);
        break;
      }
      case ModelKind::kLogreg: {
        LogregModel l;
        l.weights = p.at("weights").get<std::vector<double>>();
        l.bias = p.at("bias").get<double>();
        if (l.weights.size() != dim) throw ValidationError("weight count mismatch");
        model.emplace(std::move(l), dim, meta);
        break;
      }
      case ModelKind::kSvm: {
        SvmModel s;
        s.gamma = p.at("gamma").get<double>();
        s.support = matrix_from_json(p.at("support"));
        s.coef = p.at("coef").get<std::vector<double>>();
        s.rho = p.at("rho").get<double>();
        s.platt_a = p.at("platt_a").get<double>();
        s.platt_b = p.at("platt_b").get<double>();
        if (s.coef.size() != s.support.rows() ||
            (s.support.rows() > 0 && s.support.cols() != dim)) {
          throw ValidationError("support vector shape mismatch");
        }
        if (s.support.rows() == 0) s.support = Matrix(0, dim);
        model.emplace(std::move(s), dim, meta);
        break;
      }
    }
    if (expected) check_compatible(*model, *expected, dim);
    return std::move(*model);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
}

TrainedModel load_model(const std::filesystem::path& path,
                        std::optional<FeatureMeta> expected) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return load_model(in, expected);
}

void check_compatible(const TrainedModel& model, const FeatureMeta& meta,
                      std::size_t feature_dim) {
  if (model.meta().w != meta.w) {
    throw ValidationError("model was trained with w=" + std::to_string(model.meta().w) +
                          " but features use w=" + std::to_string(meta.w));
  }
  if (model.meta().layout_version != meta.layout_version) {
    throw ValidationError("model feature layout version " +
                          std::to_string(model.meta().layout_version) +
                          " differs from " + std::to_string(meta.layout_version));
  }
  if (model.feature_dim() != feature_dim) {
    throw ValidationError("model expects " + std::to_string(model.feature_dim()) +
                          " features, got " + std::to_string(feature_dim));
  }
}

}  // namespace sessionseg
