#pragma once

// Random-search hyperparameter studies, one per (model family, nutrient).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "soilpipe/core/parallel.hpp"
#include "soilpipe/core/random.hpp"
#include "soilpipe/core/text.hpp"
#include "soilpipe/model.hpp"
#include "soilpipe/split.hpp"

namespace soilpipe {

using ParamValue = std::variant<std::int64_t, double, std::string>;
using ParamSet = std::map<std::string, ParamValue>;

inline std::string format_param(const ParamValue& v) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto* d = std::get_if<double>(&v)) return format_double(*d);
  return std::get<std::string>(v);
}

inline nlohmann::json param_to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

inline nlohmann::json params_to_json(const ParamSet& p) {
  auto j = nlohmann::json::object();
  for (const auto& [k, v] : p) j[k] = param_to_json(v);
  return j;
}

inline ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet p;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer()) p[k] = v.get<std::int64_t>();
    else if (v.is_number()) p[k] = v.get<double>();
    else if (v.is_string()) p[k] = v.get<std::string>();
    else throw Error("parameter '" + k + "' must be a number or a string");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Search spaces

struct IntRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
  bool log = false;
};

struct StepRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  std::int64_t step = 1;
};

struct Choice {
  std::vector<ParamValue> options;
};

using Domain = std::variant<IntRange, RealRange, StepRange, Choice>;

struct ParamSpec {
  std::string name;
  Domain domain;
};

class EmptySpace : public Error {
 public:
  explicit EmptySpace(const std::string& what) : Error("empty search space: " + what) {}
};

struct SearchSpace {
  std::string name;
  std::vector<ParamSpec> params;

  void validate() const {
    if (params.empty()) throw EmptySpace(name + " has no parameters");
    for (const auto& p : params) {
      const bool empty = std::visit(
          [](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, IntRange>) return d.lo > d.hi;
            else if constexpr (std::is_same_v<T, RealRange>) return !(d.lo <= d.hi) || (d.log && d.lo <= 0.0);
            else if constexpr (std::is_same_v<T, StepRange>) return d.lo > d.hi || d.step < 1;
            else return d.options.empty();
          },
          p.domain);
      if (empty) throw EmptySpace(name + "." + p.name);
    }
  }

  bool contains(const ParamSet& config) const {
    for (const auto& p : params) {
      auto it = config.find(p.name);
      if (it == config.end()) return false;
      const auto& v = it->second;
      const bool ok = std::visit(
          [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, IntRange>) {
              auto* i = std::get_if<std::int64_t>(&v);
              return i && *i >= d.lo && *i <= d.hi;
            } else if constexpr (std::is_same_v<T, RealRange>) {
              auto* x = std::get_if<double>(&v);
              return x && *x >= d.lo && *x <= d.hi;
            } else if constexpr (std::is_same_v<T, StepRange>) {
              auto* i = std::get_if<std::int64_t>(&v);
              return i && *i >= d.lo && *i <= d.hi && (*i - d.lo) % d.step == 0;
            } else {
              return std::find(d.options.begin(), d.options.end(), v) != d.options.end();
            }
          },
          p.domain);
      if (!ok) return false;
    }
    return true;
  }
};

inline constexpr int kMaxSearchedLayers = 5;

inline std::string neuron_param(int layer) { return "neurons_l" + std::to_string(layer); }

inline const SearchSpace& gbt_space() {
  static const SearchSpace space{"gbt",
                                 {{"max_depth", IntRange{3, 12}},
                                  {"learning_rate", RealRange{0.01, 0.3, true}},
                                  {"subsample", RealRange{0.6, 1.0}},
                                  {"colsample_bytree", RealRange{0.6, 1.0}},
                                  {"gamma", RealRange{0.0, 1.0}},
                                  {"reg_alpha", RealRange{0.0, 1.0}},
                                  {"reg_lambda", RealRange{0.0, 1.0}}}};
  return space;
}

inline const SearchSpace& rf_space() {
  static const SearchSpace space{"rf",
                                 {{"n_estimators", IntRange{50, 500}},
                                  {"max_depth", IntRange{3, 30}},
                                  {"min_samples_split", IntRange{2, 20}},
                                  {"min_samples_leaf", IntRange{1, 20}},
                                  {"max_features", RealRange{0.1, 1.0}}}};
  return space;
}

/// Width is sampled for all five possible layers; only the first
/// `hidden_layers` are used.
inline const SearchSpace& fcnn_space() {
  static const SearchSpace space = [] {
    SearchSpace s{"fcnn", {{"hidden_layers", IntRange{1, kMaxSearchedLayers}}}};
    for (int l = 0; l < kMaxSearchedLayers; ++l) s.params.push_back({neuron_param(l), StepRange{8, 128, 4}});
    s.params.push_back({"dropout_rate", RealRange{0.1, 0.5}});
    s.params.push_back({"learning_rate", RealRange{1e-4, 1e-2, true}});
    s.params.push_back({"optimizer", Choice{{std::string("SGD"), std::string("Adam")}}});
    s.params.push_back({"batch_size", Choice{{std::int64_t{16}, std::int64_t{32}, std::int64_t{64}}}});
    return s;
  }();
  return space;
}

inline const SearchSpace& space_for(ModelFamily f) {
  switch (f) {
    case ModelFamily::Gbt: return gbt_space();
    case ModelFamily::Rf: return rf_space();
    case ModelFamily::Fcnn: return fcnn_space();
  }
  return gbt_space();
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial_index) {
  return derive_seed(seed, static_cast<std::uint64_t>(trial_index));
}

/// Independent draw per parameter: uniform integers, uniform reals
/// (log-uniform where flagged), uniform over the step grid or the choices.
/// Depends only on (seed, trial_index).
inline ParamSet sample(const SearchSpace& space, std::uint64_t seed, std::size_t trial_index) {
  space.validate();
  const auto base = trial_seed(seed, trial_index);
  ParamSet out;
  for (std::size_t k = 0; k < space.params.size(); ++k) {
    const auto& p = space.params[k];
    Rng rng(derive_seed(base, k));
    out[p.name] = std::visit(
        [&](const auto& d) -> ParamValue {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, IntRange>) {
            return rng.integer(d.lo, d.hi);
          } else if constexpr (std::is_same_v<T, RealRange>) {
            double x = d.log ? std::exp(rng.uniform(std::log(d.lo), std::log(d.hi))) : rng.uniform(d.lo, d.hi);
            return std::clamp(x, d.lo, d.hi);
          } else if constexpr (std::is_same_v<T, StepRange>) {
            return d.lo + d.step * rng.integer(0, (d.hi - d.lo) / d.step);
          } else {
            return d.options[rng.below(d.options.size())];
          }
        },
        p.domain);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config conversion

namespace detail {

inline const ParamValue& param_at(const ParamSet& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error("missing hyperparameter '" + name + "'");
  return it->second;
}

inline std::int64_t int_param(const ParamSet& p, const std::string& name) {
  const auto& v = param_at(p, name);
  if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw Error("hyperparameter '" + name + "' must be an integer");
}

inline double real_param(const ParamSet& p, const std::string& name) {
  const auto& v = param_at(p, name);
  if (auto* d = std::get_if<double>(&v)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw Error("hyperparameter '" + name + "' must be a number");
}

inline std::string string_param(const ParamSet& p, const std::string& name) {
  const auto& v = param_at(p, name);
  if (auto* s = std::get_if<std::string>(&v)) return *s;
  throw Error("hyperparameter '" + name + "' must be a string");
}

}  // namespace detail

/// Training settings that are fixed rather than searched.
struct TrainingBudget {
  int gbt_rounds = 200;
  int gbt_patience = 20;
  std::size_t gbt_bins = 256;
  int fcnn_epochs = 100;
  int fcnn_patience = 15;
};

inline GBTConfig gbt_config(const ParamSet& p, const TrainingBudget& b, std::uint64_t seed) {
  GBTConfig c;
  c.max_depth = static_cast<int>(detail::int_param(p, "max_depth"));
  c.learning_rate = detail::real_param(p, "learning_rate");
  c.subsample = detail::real_param(p, "subsample");
  c.colsample_bytree = detail::real_param(p, "colsample_bytree");
  c.gamma = detail::real_param(p, "gamma");
  c.reg_alpha = detail::real_param(p, "reg_alpha");
  c.reg_lambda = detail::real_param(p, "reg_lambda");
  c.n_rounds = b.gbt_rounds;
  c.early_stopping_patience = b.gbt_patience;
  c.bins = b.gbt_bins;
  c.seed = seed;
  return c;
}

inline RFConfig rf_config(const ParamSet& p, std::uint64_t seed) {
  RFConfig c;
  c.n_estimators = static_cast<int>(detail::int_param(p, "n_estimators"));
  c.max_depth = static_cast<int>(detail::int_param(p, "max_depth"));
  c.min_samples_split = static_cast<int>(detail::int_param(p, "min_samples_split"));
  c.min_samples_leaf = static_cast<int>(detail::int_param(p, "min_samples_leaf"));
  c.max_features = detail::real_param(p, "max_features");
  c.seed = seed;
  return c;
}

inline NetConfig net_config(const ParamSet& p, const TrainingBudget& b, std::uint64_t seed) {
  NetConfig c;
  const auto layers = detail::int_param(p, "hidden_layers");
  for (int l = 0; l < layers; ++l) c.hidden.push_back(static_cast<int>(detail::int_param(p, neuron_param(l))));
  c.dropout_rate = detail::real_param(p, "dropout_rate");
  c.learning_rate = detail::real_param(p, "learning_rate");
  c.optimizer = parse_optimizer(detail::string_param(p, "optimizer"));
  c.batch_size = static_cast<int>(detail::int_param(p, "batch_size"));
  c.epochs = b.fcnn_epochs;
  c.patience = b.fcnn_patience;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Fitting one configuration

using FittedModel = std::variant<TreeEnsemble, DenseNet>;

struct FitResult {
  FittedModel model;
  /// Boosting rounds or training epochs actually kept.
  int units = 0;
};

inline double predict_one(const FittedModel& m, std::span<const double> row) {
  if (auto* net = std::get_if<DenseNet>(&m)) return forward(*net, row);
  return std::get<TreeEnsemble>(m).predict(row);
}

inline double rmse_on(const FittedModel& m, const Matrix& X, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const double e = predict_one(m, X.row(i)) - y[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(X.rows()));
}

/// Fits `params` on (X, y). With a validation set GBT and FCNN stop early;
/// `units` > 0 instead fixes the number of rounds or epochs.
inline FitResult fit_params(ModelFamily family, const ParamSet& params, const Matrix& X,
                            std::span<const double> y, std::uint64_t seed, const TrainingBudget& budget,
                            const Matrix* val_X = nullptr, std::span<const double> val_y = {},
                            int units = 0, unsigned workers = 1) {
  switch (family) {
    case ModelFamily::Gbt: {
      auto cfg = gbt_config(params, budget, seed);
      std::optional<ValidationSet> val;
      if (units > 0) {
        cfg.n_rounds = units;
        cfg.early_stopping_patience = 0;
      } else if (val_X) {
        val = ValidationSet{val_X, val_y};
      }
      auto fit = fit_gbt(X, y, cfg, val);
      return {std::move(fit.model), fit.best_rounds};
    }
    case ModelFamily::Rf: {
      auto model = fit_rf(X, y, rf_config(params, seed), workers);
      return {std::move(model), static_cast<int>(model.trees.size())};
    }
    case ModelFamily::Fcnn: {
      auto cfg = net_config(params, budget, seed);
      std::optional<NetValidation> val;
      if (units > 0) {
        cfg.epochs = units;
        cfg.patience = 0;
      } else if (val_X) {
        val = NetValidation{val_X, val_y};
      }
      auto fit = train_net(X, y, cfg, val);
      return {std::move(fit.net), fit.best_epoch + 1};
    }
  }
  throw Error("unknown model family");
}

inline nlohmann::json resolved_config(ModelFamily family, const ParamSet& params, const TrainingBudget& budget,
                                      std::uint64_t seed, int units) {
  switch (family) {
    case ModelFamily::Gbt: {
      auto c = gbt_config(params, budget, seed);
      c.n_rounds = units;
      c.early_stopping_patience = 0;
      return to_json(c);
    }
    case ModelFamily::Rf: return to_json(rf_config(params, seed));
    case ModelFamily::Fcnn: {
      auto c = net_config(params, budget, seed);
      c.epochs = units;
      c.patience = 0;
      return to_json(c);
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Studies

struct CvRound {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Training partition of one study with its validation scheme. Row indices
/// in `rounds` refer to X.
struct StudyData {
  Matrix X;
  std::vector<double> y;
  std::vector<CvRound> rounds;
};

/// One round holding out ceil((1 - ratio) n) seeded rows for validation.
inline std::vector<CvRound> holdout_rounds(std::size_t n, double ratio, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  const auto n_val = single_split_test_count(n, ratio);
  if (n_val == 0 || n_val >= n) throw TooFewSamples(n);
  CvRound r;
  r.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  r.validation.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(r.train.begin(), r.train.end());
  std::sort(r.validation.begin(), r.validation.end());
  return {std::move(r)};
}

/// Rounds from per-row fold indices: round k validates on fold k.
inline std::vector<CvRound> fold_index_rounds(std::span<const int> fold, int folds) {
  std::vector<CvRound> rounds(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < fold.size(); ++i)
    for (int k = 0; k < folds; ++k) (fold[i] == k ? rounds[k].validation : rounds[k].train).push_back(i);
  for (const auto& r : rounds)
    if (r.train.empty() || r.validation.empty()) throw Error("every fold round needs training and validation rows");
  return rounds;
}

enum class TrialStatus { Ok, Diverged, Error };

inline std::string_view trial_status_name(TrialStatus s) {
  switch (s) {
    case TrialStatus::Ok: return "ok";
    case TrialStatus::Diverged: return "diverged";
    case TrialStatus::Error: return "error";
  }
  return "?";
}

struct TrialRecord {
  std::size_t id = 0;
  ParamSet config;
  /// Mean validation RMSE over rounds (NaN unless ok).
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> round_rmse;
  std::vector<int> round_units;
  double wall_seconds = 0.0;
  TrialStatus status = TrialStatus::Ok;
  std::string message;
};

class AllTrialsFailed : public Error {
 public:
  explicit AllTrialsFailed(std::size_t n) : Error("all " + std::to_string(n) + " trials failed") {}
};

struct StudyOptions {
  std::size_t n_trials = 50;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  bool refit = true;
  TrainingBudget budget;
};

struct StudyResult {
  ModelFamily family = ModelFamily::Gbt;
  std::string nutrient;
  std::vector<TrialRecord> trials;
  std::size_t best = 0;
  /// Best configuration refit on the whole training partition. Feature
  /// names, statistics and plan hash are left to the caller.
  std::optional<ModelArtifact> artifact;

  const TrialRecord& best_trial() const { return trials.at(best); }
};

inline std::uint64_t model_seed(std::uint64_t seed, std::size_t trial_index) {
  return derive_seed(trial_seed(seed, trial_index), 0x6d6f64656cULL);
}

/// Index of the lowest validation RMSE among ok trials (ties: lowest id).
inline std::optional<std::size_t> best_trial_index(std::span<const TrialRecord> trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].status != TrialStatus::Ok) continue;
    if (!best || trials[i].val_rmse < trials[*best].val_rmse) best = i;
  }
  return best;
}

/// Random search. Trial i samples its config and its model seed from
/// (seed, i) only, so records are independent of worker count and ordering.
/// Diverged networks and failing fits are recorded, never fatal. The refit
/// uses the mean number of rounds/epochs kept across validation rounds.
inline StudyResult run_study(ModelFamily family, std::string nutrient, const StudyData& data,
                             const SearchSpace& space, const StudyOptions& opts) {
  if (opts.n_trials < 1) throw Error("a study needs at least one trial");
  if (data.rounds.empty()) throw Error("a study needs at least one validation round");
  space.validate();

  struct RoundData {
    Matrix X_train, X_val;
    std::vector<double> y_train, y_val;
  };
  std::vector<RoundData> rounds;
  for (const auto& r : data.rounds) {
    RoundData d{data.X.select_rows(r.train), data.X.select_rows(r.validation), {}, {}};
    for (auto i : r.train) d.y_train.push_back(data.y[i]);
    for (auto i : r.validation) d.y_val.push_back(data.y[i]);
    rounds.push_back(std::move(d));
  }

  StudyResult result;
  result.family = family;
  result.nutrient = std::move(nutrient);
  result.trials.resize(opts.n_trials);
  parallel_for(opts.n_trials, opts.workers, [&](std::size_t t) {
    auto& rec = result.trials[t];
    rec.id = t;
    rec.config = sample(space, opts.seed, t);
    const auto start = std::chrono::steady_clock::now();
    try {
      for (const auto& r : rounds) {
        auto fit = fit_params(family, rec.config, r.X_train, r.y_train, model_seed(opts.seed, t), opts.budget,
                              &r.X_val, r.y_val);
        const double v = rmse_on(fit.model, r.X_val, r.y_val);
        if (!std::isfinite(v)) throw NonFiniteLoss(fit.units);
        rec.round_rmse.push_back(v);
        rec.round_units.push_back(fit.units);
      }
      rec.val_rmse = std::accumulate(rec.round_rmse.begin(), rec.round_rmse.end(), 0.0) /
                     static_cast<double>(rec.round_rmse.size());
      rec.status = TrialStatus::Ok;
    } catch (const NonFiniteLoss& e) {
      rec.status = TrialStatus::Diverged;
      rec.message = e.what();
    } catch (const std::exception& e) {
      rec.status = TrialStatus::Error;
      rec.message = e.what();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  auto best = best_trial_index(result.trials);
  if (!best) throw AllTrialsFailed(opts.n_trials);
  result.best = *best;

  if (opts.refit) {
    const auto& rec = result.trials[*best];
    const double mean_units = std::accumulate(rec.round_units.begin(), rec.round_units.end(), 0.0) /
                              static_cast<double>(rec.round_units.size());
    const int units = std::max(1, static_cast<int>(std::lround(mean_units)));
    const auto seed = model_seed(opts.seed, *best);
    auto fit = fit_params(family, rec.config, data.X, data.y, seed, opts.budget, nullptr, {}, units, opts.workers);
    ModelArtifact a;
    a.family = family;
    a.nutrient = result.nutrient;
    a.hyperparameters = resolved_config(family, rec.config, opts.budget, seed, units);
    a.hyperparameters["sampled"] = params_to_json(rec.config);
    if (data.rounds.size() > 1) a.fold_rmse = rec.round_rmse;
    a.model = std::move(fit.model);
    result.artifact = std::move(a);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Trial logs and best-config tables

/// One row per trial with the full sampled config flattened into columns.
/// Wall time is informational and differs between runs.
inline std::string trial_log(const SearchSpace& space, std::span<const TrialRecord> trials) {
  std::ostringstream out;
  out << "trial,status,val_rmse";
  for (const auto& p : space.params) out << ',' << p.name;
  out << ",wall_seconds,message\n";
  for (const auto& t : trials) {
    out << t.id << ',' << trial_status_name(t.status) << ',' << format_double(t.val_rmse);
    for (const auto& p : space.params) {
      auto it = t.config.find(p.name);
      out << ',' << (it == t.config.end() ? std::string(kNotAValue) : format_param(it->second));
    }
    std::string msg = t.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << ',' << format_fixed(t.wall_seconds, 3) << ',' << msg << '\n';
  }
  return out.str();
}

struct StudyCell {
  ModelFamily family = ModelFamily::Gbt;
  Nutrient nutrient = Nutrient::pH_CaCl2;
  std::vector<TrialRecord> trials;
};

class MissingCell : public Error {
 public:
  explicit MissingCell(const std::string& what) : Error("no successful trial for " + what) {}
};

struct BestConfigTable {
  ModelFamily family = ModelFamily::Gbt;
  std::vector<Nutrient> columns;
  std::vector<std::string> row_labels;
  std::vector<std::vector<std::string>> cells;  ///< [row][column]
};

namespace detail {

struct BestRow {
  std::string label;
  std::string param;
  int decimals;  ///< -1: print as is
};

inline std::vector<BestRow> best_rows(ModelFamily f) {
  switch (f) {
    case ModelFamily::Gbt:
      return {{"max_depth", "max_depth", -1},       {"learning_rate", "learning_rate", 4},
              {"subsample", "subsample", 4},         {"colsample_bytree", "colsample_bytree", 4},
              {"gamma", "gamma", 4},                 {"reg_alpha", "reg_alpha", 4},
              {"reg_lambda", "reg_lambda", 4}};
    case ModelFamily::Fcnn:
      return {{"# hidden_layer", "hidden_layers", -1},
              {"learning_rate", "learning_rate", 5},
              {"optimizer", "optimizer", -1},
              {"batch_size", "batch_size", -1}};
    case ModelFamily::Rf:
      return {{"estimators", "n_estimators", -1},         {"max_depth", "max_depth", -1},
              {"min_samples_split", "min_samples_split", -1}, {"min_samples_leaf", "min_samples_leaf", -1},
              {"max_features", "max_features", 4}};
  }
  return {};
}

}  // namespace detail

/// Best config per (family, nutrient), grouped into one table per family with
/// hyperparameters as rows and nutrients as columns in report order.
inline std::vector<BestConfigTable> report_best(std::span<const StudyCell> cells) {
  if (cells.empty()) throw MissingCell("any study (no records)");
  std::vector<BestConfigTable> tables;
  for (auto family : kAllFamilies) {
    std::vector<const StudyCell*> mine;
    for (auto n : kReportNutrientOrder)
      for (const auto& c : cells)
        if (c.family == family && c.nutrient == n) mine.push_back(&c);
    if (mine.empty()) continue;
    BestConfigTable t;
    t.family = family;
    const auto rows = detail::best_rows(family);
    t.cells.resize(rows.size());
    for (const auto& r : rows) t.row_labels.push_back(r.label);
    for (const auto* c : mine) {
      auto best = best_trial_index(c->trials);
      if (!best)
        throw MissingCell(std::string(family_id(family)) + "/" + std::string(nutrient_name(c->nutrient)));
      t.columns.push_back(c->nutrient);
      const auto& config = c->trials[*best].config;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto it = config.find(rows[r].param);
        std::string v = kNotAValue.data();
        if (it != config.end()) {
          if (rows[r].decimals >= 0) v = format_fixed(detail::real_param(config, rows[r].param), rows[r].decimals);
          else v = format_param(it->second);
        }
        t.cells[r].push_back(std::move(v));
      }
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

inline std::string best_table_caption(ModelFamily f) {
  return std::string(family_label(f)) + ": Selected Hyperparameter";
}

/// Fixed-width text rendering with the caption on top.
inline std::string format_best_table(const BestConfigTable& t) {
  std::vector<std::string> header{""};
  for (auto n : t.columns) header.emplace_back(nutrient_column_header(n));
  std::vector<std::vector<std::string>> rows{header};
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    std::vector<std::string> row{t.row_labels[r]};
    row.insert(row.end(), t.cells[r].begin(), t.cells[r].end());
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  out << best_table_caption(t.family) << '\n';
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += " | ";
      line += row[c] + std::string(width[c] - row[c].size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  }
  return out.str();
}

inline std::string best_table_tsv(const BestConfigTable& t) {
  std::ostringstream out;
  out << "hyperparameter";
  for (auto n : t.columns) out << '\t' << nutrient_column_header(n);
  out << '\n';
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    out << t.row_labels[r];
    for (const auto& v : t.cells[r]) out << '\t' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace soilpipe
