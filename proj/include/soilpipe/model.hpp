#pragma once

// Trained model artifacts: the fitted regressor together with everything
// needed to reproduce its inputs (feature names, normalization statistics)
// and the split plan it was trained under. Serialized as versioned JSON.

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "soilpipe/core/text.hpp"
#include "soilpipe/fcnn.hpp"
#include "soilpipe/preprocess.hpp"
#include "soilpipe/trees.hpp"

namespace soilpipe {

enum class ModelFamily { Gbt, Rf, Fcnn };

inline constexpr std::array<ModelFamily, 3> kAllFamilies = {ModelFamily::Gbt, ModelFamily::Fcnn,
                                                            ModelFamily::Rf};

inline std::string_view family_id(ModelFamily f) {
  switch (f) {
    case ModelFamily::Gbt: return "gbt";
    case ModelFamily::Rf: return "rf";
    case ModelFamily::Fcnn: return "fcnn";
  }
  return "?";
}

/// Display name used in report tables.
inline std::string_view family_label(ModelFamily f) {
  switch (f) {
    case ModelFamily::Gbt: return "GBT";
    case ModelFamily::Rf: return "Random Forest";
    case ModelFamily::Fcnn: return "FCNN";
  }
  return "?";
}

inline ModelFamily parse_family(std::string_view s) {
  if (s == "gbt") return ModelFamily::Gbt;
  if (s == "rf") return ModelFamily::Rf;
  if (s == "fcnn") return ModelFamily::Fcnn;
  throw Error("unknown model family '" + std::string(s) + "'");
}

struct ModelArtifact {
  static constexpr int kFormatVersion = 1;

  ModelFamily family = ModelFamily::Gbt;
  std::string nutrient;
  std::string feature_set;
  std::vector<std::string> feature_names;
  NormalizationStats stats;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::string plan_hash;
  /// Validation RMSE per CV fold when trained under a spatial plan.
  std::vector<double> fold_rmse;
  std::variant<TreeEnsemble, DenseNet> model;

  bool is_tree_model() const { return std::holds_alternative<TreeEnsemble>(model); }
  std::size_t input_size() const {
    if (auto* net = std::get_if<DenseNet>(&model)) return net->input_size();
    return feature_names.size();
  }
};

class NotTreeModel : public Error {
 public:
  NotTreeModel() : Error("operation requires a tree-based model") {}
};

/// Predictions for rows already scaled with the artifact's statistics.
inline std::vector<double> predict(const ModelArtifact& artifact, const Matrix& rows) {
  if (rows.cols() != artifact.input_size()) throw ArityMismatch(artifact.input_size(), rows.cols());
  std::vector<double> out(rows.rows());
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        for (std::size_t i = 0; i < rows.rows(); ++i) {
          if constexpr (std::is_same_v<T, DenseNet>) out[i] = forward(m, rows.row(i));
          else out[i] = m.predict(rows.row(i));
        }
      },
      artifact.model);
  return out;
}

inline std::vector<FeatureScore> gain_importance(const ModelArtifact& artifact, std::size_t top_k = 0) {
  auto* ensemble = std::get_if<TreeEnsemble>(&artifact.model);
  if (!ensemble) throw NotTreeModel();
  return gain_importance(*ensemble, artifact.feature_names, top_k);
}

// ---------------------------------------------------------------------------
// Config <-> JSON

inline nlohmann::json to_json(const GBTConfig& c) {
  return {{"max_depth", c.max_depth},
          {"learning_rate", c.learning_rate},
          {"subsample", c.subsample},
          {"colsample_bytree", c.colsample_bytree},
          {"gamma", c.gamma},
          {"reg_alpha", c.reg_alpha},
          {"reg_lambda", c.reg_lambda},
          {"n_rounds", c.n_rounds},
          {"bins", c.bins},
          {"early_stopping_patience", c.early_stopping_patience},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const RFConfig& c) {
  return {{"n_estimators", c.n_estimators},     {"max_depth", c.max_depth},
          {"min_samples_split", c.min_samples_split}, {"min_samples_leaf", c.min_samples_leaf},
          {"max_features", c.max_features},     {"bootstrap", c.bootstrap},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"hidden_layers", c.hidden_layers()},
          {"hidden", c.hidden},
          {"total_neurons", c.total_neurons()},
          {"dropout_rate", c.dropout_rate},
          {"learning_rate", c.learning_rate},
          {"optimizer", optimizer_name(c.optimizer)},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json doubles_to_json(std::span<const double> v) {
  auto arr = nlohmann::json::array();
  for (double x : v) {
    if (std::isfinite(x)) arr.push_back(x);
    else arr.push_back(nullptr);
  }
  return arr;
}

inline std::vector<double> doubles_from_json(const nlohmann::json& arr) {
  std::vector<double> out;
  for (const auto& x : arr) out.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
  return out;
}

inline nlohmann::json tree_to_json(const RegressionTree& t) {
  std::vector<int> feature, left, right;
  std::vector<double> threshold, gain, value;
  for (const auto& n : t.nodes()) {
    feature.push_back(n.feature);
    left.push_back(n.left);
    right.push_back(n.right);
    threshold.push_back(n.threshold);
    gain.push_back(n.gain);
    value.push_back(n.value);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left},
          {"right", right},     {"gain", gain},           {"value", value}};
}

inline RegressionTree tree_from_json(const nlohmann::json& j) {
  auto feature = j.at("feature").get<std::vector<int>>();
  auto left = j.at("left").get<std::vector<int>>();
  auto right = j.at("right").get<std::vector<int>>();
  auto threshold = j.at("threshold").get<std::vector<double>>();
  auto gain = j.at("gain").get<std::vector<double>>();
  auto value = j.at("value").get<std::vector<double>>();
  const auto n = feature.size();
  if (left.size() != n || right.size() != n || threshold.size() != n || gain.size() != n || value.size() != n)
    throw Error("model: tree arrays have inconsistent lengths");
  std::vector<TreeNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i] = {feature[i], threshold[i], left[i], right[i], gain[i], value[i]};
    if (!nodes[i].is_leaf() && (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) ||
                                left[i] >= static_cast<int>(n) || right[i] >= static_cast<int>(n)))
      throw Error("model: tree child index out of range");
  }
  if (nodes.empty()) throw Error("model: empty tree");
  return RegressionTree(std::move(nodes));
}

}  // namespace detail

inline nlohmann::json artifact_to_json(const ModelArtifact& a) {
  nlohmann::json j;
  j["format_version"] = ModelArtifact::kFormatVersion;
  j["family"] = family_id(a.family);
  j["nutrient"] = a.nutrient;
  j["feature_set"] = a.feature_set;
  j["feature_names"] = a.feature_names;
  j["normalization"] = {{"method", norm_method_name(a.stats.method)},
                        {"min", detail::doubles_to_json(a.stats.min)},
                        {"max", detail::doubles_to_json(a.stats.max)}};
  j["hyperparameters"] = a.hyperparameters;
  j["plan_hash"] = a.plan_hash;
  j["fold_rmse"] = detail::doubles_to_json(a.fold_rmse);
  if (auto* e = std::get_if<TreeEnsemble>(&a.model)) {
    nlohmann::json m;
    m["kind"] = e->kind == EnsembleKind::Boosted ? "boosted" : "forest";
    m["base_score"] = e->base_score;
    m["trees"] = nlohmann::json::array();
    for (const auto& t : e->trees) m["trees"].push_back(detail::tree_to_json(t));
    j["ensemble"] = std::move(m);
  } else {
    const auto& net = std::get<DenseNet>(a.model);
    nlohmann::json m;
    m["dropout_rate"] = net.dropout_rate;
    m["layers"] = nlohmann::json::array();
    for (const auto& l : net.layers)
      m["layers"].push_back({{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}});
    j["network"] = std::move(m);
  }
  return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != ModelArtifact::kFormatVersion)
    throw Error("model: unsupported format version " + std::to_string(version));
  ModelArtifact a;
  a.family = parse_family(j.at("family").get<std::string>());
  a.nutrient = j.value("nutrient", "");
  a.feature_set = j.value("feature_set", "");
  a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  const auto& norm = j.at("normalization");
  a.stats.method = parse_norm_method(norm.at("method").get<std::string>());
  a.stats.min = detail::doubles_from_json(norm.at("min"));
  a.stats.max = detail::doubles_from_json(norm.at("max"));
  a.hyperparameters = j.value("hyperparameters", nlohmann::json::object());
  a.plan_hash = j.value("plan_hash", "");
  if (j.contains("fold_rmse")) a.fold_rmse = detail::doubles_from_json(j.at("fold_rmse"));
  if (j.contains("ensemble")) {
    const auto& m = j.at("ensemble");
    TreeEnsemble e;
    e.kind = m.at("kind").get<std::string>() == "forest" ? EnsembleKind::Forest : EnsembleKind::Boosted;
    e.base_score = m.at("base_score").get<double>();
    for (const auto& t : m.at("trees")) e.trees.push_back(detail::tree_from_json(t));
    a.model = std::move(e);
  } else if (j.contains("network")) {
    const auto& m = j.at("network");
    DenseNet net;
    net.dropout_rate = m.at("dropout_rate").get<double>();
    for (const auto& lj : m.at("layers")) {
      DenseLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.weights = lj.at("weights").get<std::vector<double>>();
      l.bias = lj.at("bias").get<std::vector<double>>();
      if (l.weights.size() != l.in * l.out || l.bias.size() != l.out)
        throw Error("model: layer parameter count does not match its shape");
      net.layers.push_back(std::move(l));
    }
    if (net.layers.empty() || net.layers.back().out != 1) throw Error("model: network must end in one output");
    a.model = std::move(net);
  } else {
    throw Error("model: neither ensemble nor network present");
  }
  return a;
}

inline std::string serialize_artifact(const ModelArtifact& a) { return artifact_to_json(a).dump(1) + "\n"; }

inline ModelArtifact deserialize_artifact(std::string_view text) {
  return artifact_from_json(nlohmann::json::parse(text));
}

inline void save_artifact(const std::string& path, const ModelArtifact& a) {
  write_text_file(path, serialize_artifact(a));
}

inline ModelArtifact load_artifact(const std::string& path) { return deserialize_artifact(read_text_file(path)); }

}  // namespace soilpipe
