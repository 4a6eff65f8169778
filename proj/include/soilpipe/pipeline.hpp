#pragma once

// Stage orchestration behind the command-line tool. Every stage reads the
// previous stages' outputs below one run directory and writes its own
// subdirectory plus a manifest.json.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "soilpipe/eval.hpp"
#include "soilpipe/hpo.hpp"
#include "soilpipe/ingest.hpp"
#include "soilpipe/model.hpp"
#include "soilpipe/preprocess.hpp"
#include "soilpipe/split.hpp"
#include "soilpipe/synthgen.hpp"

#ifndef SOILPIPE_VERSION
#define SOILPIPE_VERSION "0.1.0"
#endif

namespace soilpipe::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kPipelineVersion = "soilpipe/" SOILPIPE_VERSION;

class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& reason)
      : Error("config error at " + (path.empty() ? std::string("<root>") : path) + ": " + reason),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class PrerequisiteMissing : public Error {
 public:
  explicit PrerequisiteMissing(const std::string& stage)
      : Error("run " + stage + " first"), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Run configuration

struct DataPaths {
  std::string soil;
  std::string pixels;
  std::string patches;
  std::string weather_fixture;
  std::string yield_dir;
  std::string embeddings;
};

struct SplitSettings {
  bool single = true;
  bool spatial = true;
  double ratio = 0.8;
  double grid_deg = 4.0;
  double test_share = 0.2;
  int folds = 5;
  /// Families tuned and trained under the spatial plan.
  std::vector<ModelFamily> spatial_models{ModelFamily::Gbt};
};

struct TuneSettings {
  std::size_t n_trials = 6;
  TrainingBudget budget;
};

struct ReportSettings {
  int permutation_repeats = 3;
  std::size_t histogram_bins = 20;
  /// Correlation matrices are skipped for wider tables.
  std::size_t correlation_max_columns = 200;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  SynthSourceOptions synth_sources;
  DataPaths data;
  std::vector<FeatureSetConfig> features{FeatureSetConfig::base(), FeatureSetConfig::extended()};
  std::vector<Nutrient> nutrients{kReportNutrientOrder.begin(), kReportNutrientOrder.end()};
  std::vector<ModelFamily> models{kAllFamilies.begin(), kAllFamilies.end()};
  std::string impute = "constant_midpoint";
  NormMethod normalization = NormMethod::MinMax;
  SplitSettings split;
  TuneSettings tune;
  ReportSettings report;
  /// Directory against which relative data paths resolve.
  fs::path base_dir = ".";

  RunConfig() {
    synth.n_features = kBandNames.size() + kWeatherCount;
    synth.skew = true;
  }
};

namespace detail {

/// Walks a JSON object, reporting violations with their dotted field path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) const { return j_.at(key); }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) throw ConfigError(at(key), "must be non-negative");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at(key), "expected a number");
      out = v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(at(key), "expected a string");
      out = v.get<std::string>();
    }
  }

  std::vector<std::string> strings(const std::string& key) const {
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected a list of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

template <typename T, typename Parse>
std::vector<T> parse_list(const Fields& f, const std::string& key, Parse parse) {
  std::vector<T> out;
  const auto items = f.strings(key);
  for (std::size_t i = 0; i < items.size(); ++i) {
    try {
      out.push_back(parse(items[i]));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(f.at(key) + "[" + std::to_string(i) + "]", e.what());
    }
  }
  if (out.empty()) throw ConfigError(f.at(key), "must not be empty");
  return out;
}

template <typename T, typename Parse>
T parse_value(const Fields& f, const std::string& key, Parse parse) {
  std::string s;
  f.read(key, s);
  try {
    return parse(s);
  } catch (const std::exception& e) {
    throw ConfigError(f.at(key), e.what());
  }
}

inline void require(bool ok, const std::string& path, const std::string& reason) {
  if (!ok) throw ConfigError(path, reason);
}

}  // namespace detail

/// Reads a run configuration. Unknown fields and out-of-range values are
/// rejected with the dotted path of the offending field.
inline RunConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  RunConfig c;
  c.base_dir = base_dir;
  detail::Fields root(j, "");
  root.read("seed", c.seed);

  if (root.has("synth")) {
    detail::Fields s(root.raw("synth"), "synth");
    s.read("n_samples", c.synth.n_samples);
    s.read("lat_min", c.synth.lat_min);
    s.read("lat_max", c.synth.lat_max);
    s.read("lon_min", c.synth.lon_min);
    s.read("lon_max", c.synth.lon_max);
    s.read("correlation_length_deg", c.synth.correlation_length_deg);
    s.read("n_features", c.synth.n_features);
    if (s.has("target_rule")) c.synth.target_rule = detail::parse_value<TargetRule>(s, "target_rule", parse_target_rule);
    s.read("noise_std", c.synth.noise_std);
    s.read("nuisance_std", c.synth.nuisance_std);
    s.read("feature_noise_std", c.synth.feature_noise_std);
    s.read("skew", c.synth.skew);
    s.read("embeddings", c.synth_sources.embeddings);
    s.read("patches", c.synth_sources.patches);
    s.read("patch_size", c.synth_sources.patch_size);
    s.read("yield_cell_deg", c.synth_sources.yield_cell_deg);
    s.reject_unknown();
    detail::require(c.synth.n_samples >= 1, "synth.n_samples", "must be >= 1");
    detail::require(c.synth.correlation_length_deg > 0.0, "synth.correlation_length_deg", "must be positive");
    detail::require(c.synth.lat_max > c.synth.lat_min && valid_coordinates(c.synth.lat_min, c.synth.lon_min) &&
                        valid_coordinates(c.synth.lat_max, c.synth.lon_max) && c.synth.lon_max > c.synth.lon_min,
                    "synth", "extent must be a non-empty box of valid coordinates");
    detail::require(c.synth.n_features >= kBandNames.size() + kWeatherCount, "synth.n_features",
                    "must be >= " + std::to_string(kBandNames.size() + kWeatherCount));
    detail::require(c.synth.noise_std >= 0.0, "synth.noise_std", "must be non-negative");
    detail::require(c.synth.nuisance_std >= 0.0, "synth.nuisance_std", "must be non-negative");
    detail::require(c.synth.feature_noise_std >= 0.0, "synth.feature_noise_std", "must be non-negative");
    detail::require(c.synth_sources.patch_size >= 3 && c.synth_sources.patch_size % 2 == 1, "synth.patch_size",
                    "must be odd and >= 3");
    detail::require(c.synth_sources.yield_cell_deg > 0.0, "synth.yield_cell_deg", "must be positive");
  }

  if (root.has("data")) {
    detail::Fields d(root.raw("data"), "data");
    d.read("soil", c.data.soil);
    d.read("pixels", c.data.pixels);
    d.read("patches", c.data.patches);
    d.read("weather_fixture", c.data.weather_fixture);
    d.read("yield_dir", c.data.yield_dir);
    d.read("embeddings", c.data.embeddings);
    d.reject_unknown();
  }

  if (root.has("features"))
    c.features = detail::parse_list<FeatureSetConfig>(root, "features", parse_feature_set);
  if (root.has("nutrients"))
    c.nutrients = detail::parse_list<Nutrient>(root, "nutrients", [](const std::string& s) { return parse_nutrient(s); });
  if (root.has("models"))
    c.models = detail::parse_list<ModelFamily>(root, "models", [](const std::string& s) { return parse_family(s); });
  if (root.has("impute")) {
    root.read("impute", c.impute);
    detail::require(c.impute == "constant_midpoint" || c.impute == "uniform_random", "impute",
                    "expected constant_midpoint or uniform_random");
  }
  if (root.has("normalization"))
    c.normalization = detail::parse_value<NormMethod>(root, "normalization", parse_norm_method);

  if (root.has("split")) {
    detail::Fields s(root.raw("split"), "split");
    s.read("single", c.split.single);
    s.read("spatial", c.split.spatial);
    s.read("ratio", c.split.ratio);
    s.read("grid_deg", c.split.grid_deg);
    s.read("test_share", c.split.test_share);
    s.read("folds", c.split.folds);
    if (s.has("spatial_models"))
      c.split.spatial_models =
          detail::parse_list<ModelFamily>(s, "spatial_models", [](const std::string& v) { return parse_family(v); });
    s.reject_unknown();
    detail::require(c.split.single || c.split.spatial, "split", "enable at least one of single, spatial");
    detail::require(c.split.ratio > 0.0 && c.split.ratio < 1.0, "split.ratio", "must be in (0, 1)");
    detail::require(c.split.grid_deg > 0.0, "split.grid_deg", "must be positive");
    detail::require(c.split.test_share > 0.0 && c.split.test_share < 1.0, "split.test_share", "must be in (0, 1)");
    detail::require(c.split.folds >= 2, "split.folds", "must be >= 2");
  }

  if (root.has("tune")) {
    detail::Fields t(root.raw("tune"), "tune");
    t.read("n_trials", c.tune.n_trials);
    t.read("gbt_rounds", c.tune.budget.gbt_rounds);
    t.read("gbt_patience", c.tune.budget.gbt_patience);
    t.read("gbt_bins", c.tune.budget.gbt_bins);
    t.read("fcnn_epochs", c.tune.budget.fcnn_epochs);
    t.read("fcnn_patience", c.tune.budget.fcnn_patience);
    t.reject_unknown();
    detail::require(c.tune.n_trials >= 1, "tune.n_trials", "must be >= 1");
    detail::require(c.tune.budget.gbt_rounds >= 1, "tune.gbt_rounds", "must be >= 1");
    detail::require(c.tune.budget.gbt_patience >= 0, "tune.gbt_patience", "must be non-negative");
    detail::require(c.tune.budget.gbt_bins >= 2, "tune.gbt_bins", "must be >= 2");
    detail::require(c.tune.budget.fcnn_epochs >= 1, "tune.fcnn_epochs", "must be >= 1");
    detail::require(c.tune.budget.fcnn_patience >= 0, "tune.fcnn_patience", "must be non-negative");
  }

  if (root.has("report")) {
    detail::Fields r(root.raw("report"), "report");
    r.read("permutation_repeats", c.report.permutation_repeats);
    r.read("histogram_bins", c.report.histogram_bins);
    r.read("correlation_max_columns", c.report.correlation_max_columns);
    r.reject_unknown();
    detail::require(c.report.permutation_repeats >= 1, "report.permutation_repeats", "must be >= 1");
    detail::require(c.report.histogram_bins >= 1, "report.histogram_bins", "must be >= 1");
  }
  root.reject_unknown();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j, fs::path(path).parent_path());
}

namespace detail {

template <typename Range, typename Name>
json names(const Range& items, Name name) {
  json out = json::array();
  for (const auto& i : items) out.push_back(std::string(name(i)));
  return out;
}

}  // namespace detail

inline json synth_to_json(const RunConfig& c) {
  return {{"n_samples", c.synth.n_samples},
          {"lat_min", c.synth.lat_min},
          {"lat_max", c.synth.lat_max},
          {"lon_min", c.synth.lon_min},
          {"lon_max", c.synth.lon_max},
          {"correlation_length_deg", c.synth.correlation_length_deg},
          {"n_features", c.synth.n_features},
          {"target_rule", target_rule_name(c.synth.target_rule)},
          {"noise_std", c.synth.noise_std},
          {"nuisance_std", c.synth.nuisance_std},
          {"feature_noise_std", c.synth.feature_noise_std},
          {"skew", c.synth.skew},
          {"embeddings", c.synth_sources.embeddings},
          {"patches", c.synth_sources.patches},
          {"patch_size", c.synth_sources.patch_size},
          {"yield_cell_deg", c.synth_sources.yield_cell_deg}};
}

inline json data_to_json(const RunConfig& c) {
  return {{"soil", c.data.soil},
          {"pixels", c.data.pixels},
          {"patches", c.data.patches},
          {"weather_fixture", c.data.weather_fixture},
          {"yield_dir", c.data.yield_dir},
          {"embeddings", c.data.embeddings}};
}

inline json split_to_json(const RunConfig& c) {
  return {{"single", c.split.single},
          {"spatial", c.split.spatial},
          {"ratio", c.split.ratio},
          {"grid_deg", c.split.grid_deg},
          {"test_share", c.split.test_share},
          {"folds", c.split.folds},
          {"spatial_models", detail::names(c.split.spatial_models, family_id)}};
}

inline json tune_to_json(const RunConfig& c) {
  return {{"n_trials", c.tune.n_trials},
          {"gbt_rounds", c.tune.budget.gbt_rounds},
          {"gbt_patience", c.tune.budget.gbt_patience},
          {"gbt_bins", c.tune.budget.gbt_bins},
          {"fcnn_epochs", c.tune.budget.fcnn_epochs},
          {"fcnn_patience", c.tune.budget.fcnn_patience}};
}

inline json report_to_json(const RunConfig& c) {
  return {{"permutation_repeats", c.report.permutation_repeats},
          {"histogram_bins", c.report.histogram_bins},
          {"correlation_max_columns", c.report.correlation_max_columns}};
}

inline json features_to_json(const RunConfig& c) {
  return detail::names(c.features, [](const FeatureSetConfig& f) { return f.id(); });
}

/// Complete configuration; parse_config(config_to_json(c)) reproduces c.
inline json config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"synth", synth_to_json(c)},
          {"data", data_to_json(c)},
          {"features", features_to_json(c)},
          {"nutrients", detail::names(c.nutrients, nutrient_name)},
          {"models", detail::names(c.models, family_id)},
          {"impute", c.impute},
          {"normalization", norm_method_name(c.normalization)},
          {"split", split_to_json(c)},
          {"tune", tune_to_json(c)},
          {"report", report_to_json(c)}};
}

// ---------------------------------------------------------------------------
// Manifests

inline constexpr std::array<std::string_view, 8> kStages = {"synth", "ingest",   "preprocess", "split",
                                                            "tune",  "train",    "evaluate",   "report"};

/// Output directory of a stage; the report stage writes `reports/`.
inline fs::path stage_dir(const fs::path& out, std::string_view stage) {
  return out / (stage == "report" ? std::string("reports") : std::string(stage));
}

struct Manifest {
  std::string stage;
  json config = json::object();
  std::map<std::string, std::string> inputs;  ///< path relative to the run dir -> content hash
  std::vector<std::string> outputs;
  json extra = json::object();
};

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_text_file(p.string()))); }

inline void write_manifest(const fs::path& out, Manifest m) {
  std::sort(m.outputs.begin(), m.outputs.end());
  json j = {{"stage", m.stage},
            {"pipeline_version", kPipelineVersion},
            {"config", m.config},
            {"inputs", m.inputs},
            {"outputs", m.outputs}};
  if (!m.extra.empty()) j["summary"] = m.extra;
  write_text_file((stage_dir(out, m.stage) / "manifest.json").string(), j.dump(2) + "\n");
}

inline json read_manifest(const fs::path& out, std::string_view stage) {
  const auto path = stage_dir(out, stage) / "manifest.json";
  if (!fs::exists(path)) throw PrerequisiteMissing(std::string(stage));
  auto j = json::parse(read_text_file(path.string()));
  if (j.value("pipeline_version", "") != kPipelineVersion)
    throw Error(std::string(stage) + " outputs were written by " + j.value("pipeline_version", "?") + "; run " +
                std::string(stage) + " again");
  return j;
}

/// Throws PrerequisiteMissing naming the earliest missing stage among the
/// ones required before `stage` (synth is optional and never required).
inline void require_stages(const fs::path& out, std::string_view stage) {
  for (auto s : kStages) {
    if (s == stage) return;
    if (s == "synth") continue;
    read_manifest(out, s);
  }
}

namespace detail {

inline void hash_input(Manifest& m, const fs::path& out, const fs::path& file) {
  m.inputs[fs::relative(file, out).generic_string()] = file_hash(file);
}

inline void add_output(Manifest& m, const fs::path& out, const fs::path& file) {
  m.outputs.push_back(fs::relative(file, out).generic_string());
}

inline fs::path resolve(const RunConfig& c, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

inline std::string study_key(SplitStrategy s, const std::string& fs_id, ModelFamily f, Nutrient n) {
  return std::string(strategy_name(s)) + "_" + fs_id + "_" + std::string(family_id(f)) + "_" +
         std::string(nutrient_name(n));
}

inline std::uint64_t study_seed(std::uint64_t seed, const std::string& key) {
  return derive_seed(seed, fnv1a(key));
}

inline std::vector<SplitStrategy> strategies(const RunConfig& c) {
  std::vector<SplitStrategy> out;
  if (c.split.single) out.push_back(SplitStrategy::Single);
  if (c.split.spatial) out.push_back(SplitStrategy::SpatialGrid);
  return out;
}

inline std::vector<ModelFamily> families_for(const RunConfig& c, SplitStrategy s) {
  if (s == SplitStrategy::Single) return c.models;
  std::vector<ModelFamily> out;
  for (auto f : c.models)
    if (std::find(c.split.spatial_models.begin(), c.split.spatial_models.end(), f) != c.split.spatial_models.end())
      out.push_back(f);
  return out;
}

inline fs::path plan_path(const fs::path& out, SplitStrategy s) {
  return stage_dir(out, "split") / ("plan_" + std::string(strategy_name(s)) + ".csv");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages

struct StageContext {
  fs::path out;
  RunConfig config;
  unsigned workers = 1;
};

/// Writes a synthetic world in the ingest formats under synth/.
inline void run_synth(const StageContext& ctx) {
  const auto dir = stage_dir(ctx.out, "synth");
  fs::create_directories(dir);
  Manifest m{"synth", {{"seed", ctx.config.seed}, {"synth", synth_to_json(ctx.config)}}, {}, {}, {}};

  SynthConfig cfg = ctx.config.synth;
  cfg.seed = ctx.config.seed;
  const auto data = generate(cfg);
  const auto src = make_sources(cfg, data, ctx.config.synth_sources);

  const auto soil = dir / "soil.csv";
  save_soil_table(soil.string(), src.samples, false);
  detail::add_output(m, ctx.out, soil);
  const auto pixels = dir / "pixels.csv";
  save_column_block(pixels.string(), src.pixels);
  detail::add_output(m, ctx.out, pixels);
  {
    std::ostringstream ss;
    write_weather_fixture(ss, src.weather);
    const auto p = dir / "weather_fixture.csv";
    write_text_file(p.string(), ss.str());
    detail::add_output(m, ctx.out, p);
  }
  fs::create_directories(dir / "yield");
  for (const auto& r : src.yield) {
    const auto p = dir / "yield" / (r.crop_code + ".grid");
    write_text_file(p.string(), encode_yield_raster(r));
    detail::add_output(m, ctx.out, p);
  }
  if (ctx.config.synth_sources.embeddings) {
    std::ostringstream ss;
    ss << "point_id";
    for (const auto& n : src.embeddings.names) ss << ',' << n;
    ss << '\n';
    for (const auto& s : src.samples) {
      ss << s.point_id;
      for (double v : src.embeddings.rows.at(s.point_id)) ss << ',' << format_double(v);
      ss << '\n';
    }
    const auto p = dir / "embeddings.csv";
    write_text_file(p.string(), ss.str());
    detail::add_output(m, ctx.out, p);
  }
  if (ctx.config.synth_sources.patches) {
    for (const auto& [id, patches] : src.patches) {
      const auto pdir = dir / "patches" / std::to_string(id);
      fs::create_directories(pdir);
      for (const auto& p : patches) write_patch((pdir / (p.band_id + ".spx")).string(), p);
    }
    m.outputs.push_back("synth/patches/");
  }
  const auto run = dir / "run.json";
  write_text_file(run.string(), json{{"seed", ctx.config.seed}, {"synth", synth_to_json(ctx.config)},
                                     {"samples", src.samples.size()}}
                                        .dump(2) +
                                    "\n");
  detail::add_output(m, ctx.out, run);
  write_manifest(ctx.out, std::move(m));
}

namespace detail {

/// Data paths from the config, falling back to synth/ outputs.
inline DataPaths effective_paths(const StageContext& ctx) {
  DataPaths p = ctx.config.data;
  if (p.soil.empty()) {
    read_manifest(ctx.out, "synth");
    const auto s = stage_dir(ctx.out, "synth");
    p.soil = (s / "soil.csv").string();
    if (p.pixels.empty() && p.patches.empty()) {
      if (fs::is_directory(s / "patches")) p.patches = (s / "patches").string();
      else p.pixels = (s / "pixels.csv").string();
    }
    if (p.weather_fixture.empty()) p.weather_fixture = (s / "weather_fixture.csv").string();
    if (p.yield_dir.empty()) p.yield_dir = (s / "yield").string();
    if (p.embeddings.empty() && fs::exists(s / "embeddings.csv")) p.embeddings = (s / "embeddings.csv").string();
    return p;
  }
  auto fix = [&](std::string& v) {
    if (!v.empty()) v = resolve(ctx.config, v).string();
  };
  fix(p.soil);
  fix(p.pixels);
  fix(p.patches);
  fix(p.weather_fixture);
  fix(p.yield_dir);
  fix(p.embeddings);
  return p;
}

inline void need(const std::string& value, const std::string& field, const std::string& why) {
  if (value.empty()) throw ConfigError(field, "required " + why);
}

}  // namespace detail

/// Reads every source and assembles one raw feature table per configured
/// feature set. Samples whose weather cannot be resolved are listed in
/// unresolved_weather.csv and left out of every table.
inline void run_ingest(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  const auto paths = detail::effective_paths(ctx);
  const auto dir = stage_dir(ctx.out, "ingest");
  fs::create_directories(dir);
  Manifest m{"ingest", {{"features", features_to_json(cfg)}}, {}, {}, {}};
  auto hash_external = [&](const fs::path& p) {
    m.inputs[fs::absolute(p).lexically_normal().generic_string().starts_with(
                 fs::absolute(ctx.out).lexically_normal().generic_string())
                 ? fs::relative(p, ctx.out).generic_string()
                 : p.filename().generic_string()] = file_hash(p);
  };

  bool surr = false, wthr = false, cry = false, clay = false;
  for (const auto& f : cfg.features) {
    surr |= f.surr;
    wthr |= f.wthr;
    cry |= f.cry;
    clay |= f.clay;
  }

  auto samples = read_soil_table(paths.soil);
  hash_external(paths.soil);

  SourceColumns sources;
  if (!paths.pixels.empty()) {
    sources.pixels = read_column_block(paths.pixels);
    hash_external(paths.pixels);
  } else {
    detail::need(paths.patches, "data.patches", "when data.pixels is not set");
    sources.pixels = read_patch_directory(paths.patches, samples, surr);
  }

  std::vector<PointId> unresolved;
  if (wthr) {
    detail::need(paths.weather_fixture, "data.weather_fixture", "for weather features");
    FixtureWeatherFetcher fetcher(paths.weather_fixture);
    WeatherCache cache((dir / "weather_cache.csv").string());
    const auto requests = weather_requests(samples);
    auto result = fetch_weather(requests, fetcher, cache);
    sources.weather = result.to_block();
    unresolved = result.unresolved;
    m.extra["weather_fetched"] = result.fetched;
    detail::add_output(m, ctx.out, dir / "weather_cache.csv");
  }
  if (cry) {
    detail::need(paths.yield_dir, "data.yield_dir", "for crop yield features");
    auto rasters = read_yield_directory(paths.yield_dir);
    sources.yield = yield_block(rasters, samples);
  }
  if (clay) {
    detail::need(paths.embeddings, "data.embeddings", "for embedding features");
    sources.embeddings = read_embeddings(paths.embeddings);
    hash_external(paths.embeddings);
  }

  {
    std::ostringstream ss;
    ss << "point_id\n";
    for (auto id : unresolved) ss << id << '\n';
    write_text_file((dir / "unresolved_weather.csv").string(), ss.str());
    detail::add_output(m, ctx.out, dir / "unresolved_weather.csv");
  }
  if (!unresolved.empty()) {
    std::set<PointId> drop(unresolved.begin(), unresolved.end());
    std::erase_if(samples, [&](const SampleRecord& s) { return drop.count(s.point_id) > 0; });
  }

  const auto soil = dir / "samples.csv";
  save_soil_table(soil.string(), samples, true);
  detail::add_output(m, ctx.out, soil);
  for (const auto& f : cfg.features) {
    const auto table = assemble_feature_table(samples, sources, f);
    const auto p = dir / ("features_" + f.id() + ".csv");
    save_feature_table(p.string(), table);
    detail::add_output(m, ctx.out, p);
  }
  m.extra["samples"] = samples.size();
  m.extra["unresolved_weather"] = unresolved.size();
  write_manifest(ctx.out, std::move(m));
}

inline void run_preprocess(const StageContext& ctx) {
  require_stages(ctx.out, "preprocess");
  const auto& cfg = ctx.config;
  const auto in = stage_dir(ctx.out, "ingest");
  const auto dir = stage_dir(ctx.out, "preprocess");
  fs::create_directories(dir);
  Manifest m{"preprocess",
             {{"impute", cfg.impute}, {"normalization", norm_method_name(cfg.normalization)}, {"seed", cfg.seed},
              {"features", features_to_json(cfg)}, {"report", report_to_json(cfg)}},
             {}, {}, {}};

  detail::hash_input(m, ctx.out, in / "samples.csv");
  auto samples = read_soil_table((in / "samples.csv").string());
  if (cfg.impute == "uniform_random")
    for (auto n : {Nutrient::N, Nutrient::P, Nutrient::K})
      samples = impute_below_lod(std::move(samples), n,
                                 UniformRandom{derive_seed(cfg.seed, 0x696d70 + static_cast<std::uint64_t>(n))});
  const auto soil = dir / "samples.csv";
  save_soil_table(soil.string(), samples, true);
  detail::add_output(m, ctx.out, soil);

  std::vector<Histogram> target_hist;
  for (auto n : kReportNutrientOrder) {
    std::vector<double> v;
    for (const auto& s : samples) {
      auto it = s.targets.find(n);
      v.push_back(it == s.targets.end() ? kNaN : it->second);
    }
    target_hist.push_back(histogram(std::string(nutrient_name(n)), v, cfg.report.histogram_bins));
  }
  write_text_file((dir / "histograms_targets.tsv").string(), histograms_to_tsv(target_hist));
  detail::add_output(m, ctx.out, dir / "histograms_targets.tsv");

  for (const auto& f : cfg.features) {
    const auto src = in / ("features_" + f.id() + ".csv");
    detail::hash_input(m, ctx.out, src);
    const auto raw = read_feature_table(src.string());
    const auto norm = normalize(raw, cfg.normalization);
    const auto p = dir / ("normalized_" + f.id() + ".csv");
    save_feature_table(p.string(), norm.table, true);
    detail::add_output(m, ctx.out, p);

    const json stats = {{"method", norm_method_name(norm.stats.method)},
                        {"columns", raw.column_names()},
                        {"min", norm.stats.min},
                        {"max", norm.stats.max}};
    write_text_file((dir / ("stats_" + f.id() + ".json")).string(), stats.dump(1) + "\n");
    detail::add_output(m, ctx.out, dir / ("stats_" + f.id() + ".json"));

    const auto hs = histogram_report(raw, cfg.report.histogram_bins);
    write_text_file((dir / ("histograms_" + f.id() + ".tsv")).string(), histograms_to_tsv(hs));
    detail::add_output(m, ctx.out, dir / ("histograms_" + f.id() + ".tsv"));

    if (raw.cols() + kAllNutrients.size() <= cfg.report.correlation_max_columns && raw.rows() >= 2) {
      std::vector<std::string> labels = raw.column_names();
      std::vector<std::vector<double>> cols;
      for (std::size_t c = 0; c < raw.cols(); ++c) cols.push_back(raw.raw().column(c));
      std::unordered_map<PointId, const SampleRecord*> by_id;
      for (const auto& s : samples) by_id[s.point_id] = &s;
      for (auto n : kReportNutrientOrder) {
        labels.emplace_back(nutrient_name(n));
        std::vector<double> v;
        for (auto key : raw.row_keys()) {
          auto it = by_id.find(key);
          if (it == by_id.end()) {
            v.push_back(kNaN);
            continue;
          }
          auto t = it->second->targets.find(n);
          v.push_back(t == it->second->targets.end() ? kNaN : t->second);
        }
        cols.push_back(std::move(v));
      }
      const auto corr = pearson_matrix(std::move(labels), cols);
      write_text_file((dir / ("corr_" + f.id() + ".tsv")).string(), correlation_to_tsv(corr));
      detail::add_output(m, ctx.out, dir / ("corr_" + f.id() + ".tsv"));
    }
  }
  write_manifest(ctx.out, std::move(m));
}

inline void run_split(const StageContext& ctx) {
  require_stages(ctx.out, "split");
  const auto& cfg = ctx.config;
  const auto dir = stage_dir(ctx.out, "split");
  fs::create_directories(dir);
  Manifest m{"split", {{"seed", cfg.seed}, {"split", split_to_json(cfg)}}, {}, {}, {}};
  const auto src = stage_dir(ctx.out, "preprocess") / "samples.csv";
  detail::hash_input(m, ctx.out, src);
  const auto samples = read_soil_table(src.string());
  const auto seed = derive_seed(cfg.seed, 0x73706c6974ULL);
  for (auto s : detail::strategies(cfg)) {
    SplitPlan plan = s == SplitStrategy::Single
                         ? single_split(samples, cfg.split.ratio, seed)
                         : spatial_grid_split(samples, {cfg.split.grid_deg, cfg.split.test_share, cfg.split.folds, seed});
    const auto p = detail::plan_path(ctx.out, s);
    write_text_file(p.string(), plan_to_string(plan));
    detail::add_output(m, ctx.out, p);
    m.extra[std::string(strategy_name(s))] = {{"train", plan.count(Role::Train)}, {"test", plan.count(Role::Test)},
                                              {"hash", plan_hash(plan)}};
  }
  write_manifest(ctx.out, std::move(m));
}

namespace detail {

/// Normalized training partition of one plan: single-split training rows with
/// a seeded inner holdout, or all non-test rows with their CV folds.
struct Partition {
  StudyData data;
  std::vector<PointId> ids;
};

inline Partition training_partition(const SplitPlan& plan, const FeatureTable& normalized,
                                    std::span<const SampleRecord> samples, Nutrient nutrient, double ratio,
                                    std::uint64_t seed) {
  std::unordered_map<PointId, std::size_t> row_of;
  for (std::size_t i = 0; i < normalized.row_keys().size(); ++i) row_of[normalized.row_keys()[i]] = i;
  std::unordered_map<PointId, const SampleRecord*> sample_of;
  for (const auto& s : samples) sample_of[s.point_id] = &s;

  Partition p;
  std::vector<std::size_t> rows;
  std::vector<int> folds;
  std::vector<SampleRecord> picked;
  for (const auto& a : plan.assignments) {
    if (a.role == Role::Test) continue;
    auto r = row_of.find(a.point_id);
    if (r == row_of.end()) throw MissingColumn(a.point_id, "feature row");
    auto s = sample_of.find(a.point_id);
    if (s == sample_of.end()) throw MissingTarget(a.point_id, nutrient);
    rows.push_back(r->second);
    folds.push_back(a.fold);
    picked.push_back(*s->second);
    p.ids.push_back(a.point_id);
  }
  p.data.X = normalized.normalized().select_rows(rows);
  p.data.y = target_vector(picked, nutrient);
  p.data.rounds = plan.strategy == SplitStrategy::Single ? holdout_rounds(rows.size(), ratio, seed)
                                                         : fold_index_rounds(folds, plan.folds);
  return p;
}

inline FeatureTable load_normalized(const fs::path& out, const std::string& fs_id) {
  const auto pre = stage_dir(out, "preprocess");
  const auto table = read_feature_table((pre / ("normalized_" + fs_id + ".csv")).string());
  const auto raw = read_feature_table((stage_dir(out, "ingest") / ("features_" + fs_id + ".csv")).string());
  if (raw.column_names() != table.column_names() || raw.row_keys() != table.row_keys())
    throw Error("normalized and raw tables for " + fs_id + " differ in shape; run preprocess again");
  return raw.with_normalized(table.raw(), {}, {});
}

inline NormalizationStats load_stats(const fs::path& out, const std::string& fs_id) {
  const auto j = json::parse(read_text_file((stage_dir(out, "preprocess") / ("stats_" + fs_id + ".json")).string()));
  NormalizationStats s;
  s.method = parse_norm_method(j.at("method").get<std::string>());
  for (const auto& v : j.at("min")) s.min.push_back(v.is_null() ? kNaN : v.get<double>());
  for (const auto& v : j.at("max")) s.max.push_back(v.is_null() ? kNaN : v.get<double>());
  return s;
}

struct StudyJob {
  SplitStrategy strategy;
  FeatureSetConfig features;
  ModelFamily family;
  Nutrient nutrient;
  std::string key() const { return study_key(strategy, features.id(), family, nutrient); }
};

inline std::vector<StudyJob> study_jobs(const RunConfig& c) {
  std::vector<StudyJob> jobs;
  for (auto s : strategies(c))
    for (const auto& f : c.features)
      for (auto fam : families_for(c, s))
        for (auto n : c.nutrients) jobs.push_back({s, f, fam, n});
  return jobs;
}

}  // namespace detail

/// Random search per (strategy, feature set, model, nutrient). Writes the
/// trial log and the best trial of every study; models are fit by `train`.
inline void run_tune(const StageContext& ctx) {
  require_stages(ctx.out, "tune");
  const auto& cfg = ctx.config;
  const auto dir = stage_dir(ctx.out, "tune");
  fs::create_directories(dir);
  Manifest m{"tune",
             {{"seed", cfg.seed}, {"tune", tune_to_json(cfg)}, {"split", split_to_json(cfg)},
              {"models", detail::names(cfg.models, family_id)}, {"nutrients", detail::names(cfg.nutrients, nutrient_name)}},
             {}, {}, {}};
  const auto samples_path = stage_dir(ctx.out, "preprocess") / "samples.csv";
  detail::hash_input(m, ctx.out, samples_path);
  const auto samples = read_soil_table(samples_path.string());

  std::map<SplitStrategy, SplitPlan> plans;
  for (auto s : detail::strategies(cfg)) {
    const auto p = detail::plan_path(ctx.out, s);
    detail::hash_input(m, ctx.out, p);
    plans[s] = read_plan(p.string());
  }
  std::map<std::string, FeatureTable> tables;
  for (const auto& f : cfg.features) {
    detail::hash_input(m, ctx.out, stage_dir(ctx.out, "preprocess") / ("normalized_" + f.id() + ".csv"));
    tables.emplace(f.id(), detail::load_normalized(ctx.out, f.id()));
  }

  for (const auto& job : detail::study_jobs(cfg)) {
    const auto key = job.key();
    const auto seed = detail::study_seed(cfg.seed, key);
    const auto& plan = plans.at(job.strategy);
    auto part = detail::training_partition(plan, tables.at(job.features.id()), samples, job.nutrient,
                                           cfg.split.ratio, derive_seed(seed, 0x686f6c64ULL));
    StudyOptions opts;
    opts.n_trials = cfg.tune.n_trials;
    opts.seed = seed;
    opts.workers = ctx.workers;
    opts.refit = false;
    opts.budget = cfg.tune.budget;
    const auto& space = space_for(job.family);
    auto result = run_study(job.family, std::string(nutrient_name(job.nutrient)), part.data, space, opts);
    const auto& best = result.best_trial();

    const auto log = dir / (key + ".trials.csv");
    write_text_file(log.string(), trial_log(space, result.trials));
    detail::add_output(m, ctx.out, log);
    const json j = {{"strategy", strategy_name(job.strategy)},
                    {"feature_set", job.features.id()},
                    {"family", family_id(job.family)},
                    {"nutrient", nutrient_name(job.nutrient)},
                    {"plan_hash", plan_hash(plan)},
                    {"study_seed", seed},
                    {"best_trial", best.id},
                    {"val_rmse", best.val_rmse},
                    {"round_rmse", best.round_rmse},
                    {"round_units", best.round_units},
                    {"params", params_to_json(best.config)}};
    const auto bp = dir / (key + ".best.json");
    write_text_file(bp.string(), j.dump(2) + "\n");
    detail::add_output(m, ctx.out, bp);
  }
  write_manifest(ctx.out, std::move(m));
}

/// Refits each study's best configuration on the whole training partition
/// (all non-test rows for spatial plans) and saves the model artifact.
inline void run_train(const StageContext& ctx) {
  require_stages(ctx.out, "train");
  const auto& cfg = ctx.config;
  const auto dir = stage_dir(ctx.out, "train");
  fs::create_directories(dir / "models");
  Manifest m{"train", {{"seed", cfg.seed}, {"tune", tune_to_json(cfg)}}, {}, {}, {}};
  const auto samples = read_soil_table((stage_dir(ctx.out, "preprocess") / "samples.csv").string());

  std::map<SplitStrategy, SplitPlan> plans;
  for (auto s : detail::strategies(cfg)) plans[s] = read_plan(detail::plan_path(ctx.out, s).string());
  std::map<std::string, FeatureTable> tables;
  std::map<std::string, NormalizationStats> stats;
  for (const auto& f : cfg.features) {
    tables.emplace(f.id(), detail::load_normalized(ctx.out, f.id()));
    stats.emplace(f.id(), detail::load_stats(ctx.out, f.id()));
  }

  for (const auto& job : detail::study_jobs(cfg)) {
    const auto key = job.key();
    const auto bp = stage_dir(ctx.out, "tune") / (key + ".best.json");
    if (!fs::exists(bp)) throw PrerequisiteMissing("tune");
    detail::hash_input(m, ctx.out, bp);
    const auto best = json::parse(read_text_file(bp.string()));
    const auto& plan = plans.at(job.strategy);
    if (best.at("plan_hash").get<std::string>() != plan_hash(plan))
      throw Error("tuning results for " + key + " predate the current split; run tune again");

    const std::uint64_t seed = best.at("study_seed").get<std::uint64_t>();
    const auto trial = best.at("best_trial").get<std::size_t>();
    auto part = detail::training_partition(plan, tables.at(job.features.id()), samples, job.nutrient, cfg.split.ratio,
                                           derive_seed(seed, 0x686f6c64ULL));
    const auto units_list = best.at("round_units").get<std::vector<int>>();
    const double mean_units =
        std::accumulate(units_list.begin(), units_list.end(), 0.0) / static_cast<double>(units_list.size());
    const int units = std::max(1, static_cast<int>(std::lround(mean_units)));
    const auto params = params_from_json(best.at("params"));
    const auto mseed = model_seed(seed, trial);
    auto fit = fit_params(job.family, params, part.data.X, part.data.y, mseed, cfg.tune.budget, nullptr, {}, units,
                          ctx.workers);

    ModelArtifact a;
    a.family = job.family;
    a.nutrient = std::string(nutrient_name(job.nutrient));
    a.feature_set = job.features.id();
    a.feature_names = tables.at(job.features.id()).column_names();
    a.stats = stats.at(job.features.id());
    a.hyperparameters = resolved_config(job.family, params, cfg.tune.budget, mseed, units);
    a.hyperparameters["sampled"] = best.at("params");
    a.plan_hash = plan_hash(plan);
    if (job.strategy == SplitStrategy::SpatialGrid) a.fold_rmse = best.at("round_rmse").get<std::vector<double>>();
    a.model = std::move(fit.model);
    const auto p = dir / "models" / (key + ".json");
    save_artifact(p.string(), a);
    detail::add_output(m, ctx.out, p);
  }
  write_manifest(ctx.out, std::move(m));
}

namespace detail {

inline std::string eval_header() {
  return "family\tnutrient\tfeature_set\tstrategy\trmse_test\trmse_average\ttarget_mean\ttarget_std\tn_train\tn_val\tn_test";
}

inline std::string eval_line(const EvalRow& r) {
  std::ostringstream ss;
  ss << family_id(r.family) << '\t' << nutrient_name(r.nutrient) << '\t' << r.feature_set << '\t'
     << strategy_name(r.strategy) << '\t' << format_double(r.rmse_test) << '\t' << format_double(r.rmse_average)
     << '\t' << format_double(r.target_mean) << '\t' << format_double(r.target_std) << '\t' << r.n_train << '\t'
     << r.n_val << '\t' << r.n_test;
  return ss.str();
}

inline std::vector<EvalRow> parse_eval_rows(const std::string& text) {
  std::istringstream in(text);
  auto file = parse_delimited(in, '\t');
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < file.rows.size(); ++i) {
    const auto& f = file.rows[i];
    const auto line = file.line_numbers[i];
    EvalRow r;
    r.family = parse_family(f[0]);
    r.nutrient = parse_nutrient(f[1]);
    r.feature_set = f[2];
    r.strategy = parse_strategy(f[3]);
    r.rmse_test = parse_double(f[4], line);
    r.rmse_average = parse_double(f[5], line);
    r.target_mean = parse_double(f[6], line);
    r.target_std = parse_double(f[7], line);
    r.n_train = static_cast<std::size_t>(parse_int(f[8], line));
    r.n_val = static_cast<std::size_t>(parse_int(f[9], line));
    r.n_test = static_cast<std::size_t>(parse_int(f[10], line));
    rows.push_back(r);
  }
  return rows;
}

inline std::string scores_tsv(std::span<const FeatureScore> scores) {
  std::ostringstream ss;
  ss << "rank\tfeature\tscore\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    ss << i + 1 << '\t' << scores[i].name << '\t' << format_double(scores[i].score) << '\n';
  return ss.str();
}

inline std::vector<FeatureScore> parse_scores(const std::string& text) {
  std::istringstream in(text);
  auto file = parse_delimited(in, '\t');
  std::vector<FeatureScore> out;
  for (std::size_t i = 0; i < file.rows.size(); ++i)
    out.push_back({i, file.rows[i][1], parse_double(file.rows[i][2], file.line_numbers[i])});
  return out;
}

}  // namespace detail

/// Scores every trained model on its plan's test cells. Writes eval.tsv,
/// test-set predictions, and gain / permutation importances.
inline void run_evaluate(const StageContext& ctx) {
  require_stages(ctx.out, "evaluate");
  const auto& cfg = ctx.config;
  const auto dir = stage_dir(ctx.out, "evaluate");
  fs::create_directories(dir / "predictions");
  fs::create_directories(dir / "importance");
  Manifest m{"evaluate", {{"seed", cfg.seed}, {"report", report_to_json(cfg)}}, {}, {}, {}};
  const auto samples = read_soil_table((stage_dir(ctx.out, "preprocess") / "samples.csv").string());
  std::map<SplitStrategy, SplitPlan> plans;
  for (auto s : detail::strategies(cfg)) plans[s] = read_plan(detail::plan_path(ctx.out, s).string());
  std::map<std::string, FeatureTable> raw;
  for (const auto& f : cfg.features)
    raw.emplace(f.id(), read_feature_table((stage_dir(ctx.out, "ingest") / ("features_" + f.id() + ".csv")).string()));

  std::ostringstream eval;
  eval << detail::eval_header() << '\n';
  for (const auto& job : detail::study_jobs(cfg)) {
    const auto key = job.key();
    const auto mp = stage_dir(ctx.out, "train") / "models" / (key + ".json");
    if (!fs::exists(mp)) throw PrerequisiteMissing("train");
    detail::hash_input(m, ctx.out, mp);
    const auto artifact = load_artifact(mp.string());
    const auto& plan = plans.at(job.strategy);
    const auto& table = raw.at(job.features.id());
    const auto row = evaluate(artifact, plan, table, samples, job.nutrient);
    eval << detail::eval_line(row) << '\n';

    const auto test_ids = plan.ids_with_role(Role::Test);
    auto [X_raw, y] = partition_rows(table, samples, test_ids, job.nutrient);
    const auto X = apply_stats(X_raw, artifact.stats);
    const auto pred = predict(artifact, X);
    std::ostringstream ps;
    ps << "point_id,truth,prediction\n";
    for (std::size_t i = 0; i < test_ids.size(); ++i)
      ps << test_ids[i] << ',' << format_double(y[i]) << ',' << format_double(pred[i]) << '\n';
    const auto pp = dir / "predictions" / (key + ".csv");
    write_text_file(pp.string(), ps.str());
    detail::add_output(m, ctx.out, pp);

    if (artifact.is_tree_model()) {
      const auto gp = dir / "importance" / (key + ".gain.tsv");
      write_text_file(gp.string(), detail::scores_tsv(gain_importance(artifact)));
      detail::add_output(m, ctx.out, gp);
    }
    const auto perm = permutation_importance(artifact, X, y, cfg.report.permutation_repeats,
                                             derive_seed(cfg.seed, fnv1a(key)), ctx.workers);
    const auto pmp = dir / "importance" / (key + ".permutation.tsv");
    write_text_file(pmp.string(), detail::scores_tsv(perm));
    detail::add_output(m, ctx.out, pmp);
  }
  write_text_file((dir / "eval.tsv").string(), eval.str());
  detail::add_output(m, ctx.out, dir / "eval.tsv");
  write_manifest(ctx.out, std::move(m));
}

namespace detail {

inline CorrelationMatrix parse_correlation_tsv(const std::string& text) {
  std::istringstream in(text);
  auto file = parse_delimited(in, '\t');
  CorrelationMatrix c;
  c.labels.assign(file.header.begin() + 1, file.header.end());
  c.r = Matrix(c.labels.size(), c.labels.size());
  for (std::size_t i = 0; i < file.rows.size(); ++i)
    for (std::size_t j = 0; j < c.labels.size(); ++j)
      c.r(i, j) = parse_double(file.rows[i][j + 1], file.line_numbers[i]);
  return c;
}

}  // namespace detail

/// Aggregates evaluation results into reports/: performance tables,
/// best-configuration tables, importance charts and correlation heatmaps.
/// Importance charts use the single split (spatial if that is all there is)
/// and the widest feature set; gain for tree models, permutation otherwise.
inline void run_report(const StageContext& ctx) {
  require_stages(ctx.out, "report");
  const auto& cfg = ctx.config;
  const auto dir = stage_dir(ctx.out, "report");
  fs::create_directories(dir);
  Manifest m{"report", {{"features", features_to_json(cfg)}}, {}, {}, {}};

  const auto eval_path = stage_dir(ctx.out, "evaluate") / "eval.tsv";
  detail::hash_input(m, ctx.out, eval_path);
  ReportInputs in;
  in.rows = detail::parse_eval_rows(read_text_file(eval_path.string()));

  const auto strats = detail::strategies(cfg);
  const auto imp_strategy = strats.front();
  auto widest = *std::max_element(cfg.features.begin(), cfg.features.end(),
                                  [](const auto& a, const auto& b) { return a.column_count() < b.column_count(); });
  for (auto fam : detail::families_for(cfg, imp_strategy))
    for (auto n : cfg.nutrients) {
      const auto key = detail::study_key(imp_strategy, widest.id(), fam, n);
      const bool tree = fam != ModelFamily::Fcnn;
      const auto p = stage_dir(ctx.out, "evaluate") / "importance" / (key + (tree ? ".gain.tsv" : ".permutation.tsv"));
      detail::hash_input(m, ctx.out, p);
      in.importances.push_back({fam, n, tree ? "gain" : "permutation", detail::parse_scores(read_text_file(p.string()))});
    }
  for (const auto& f : cfg.features) {
    const auto p = stage_dir(ctx.out, "preprocess") / ("corr_" + f.id() + ".tsv");
    if (!fs::exists(p)) continue;
    detail::hash_input(m, ctx.out, p);
    in.correlations.push_back({f.id(), detail::parse_correlation_tsv(read_text_file(p.string()))});
  }
  for (const auto& name : render_reports(in, dir)) m.outputs.push_back("reports/" + name);

  for (auto s : strats)
    for (const auto& f : cfg.features) {
      std::vector<StudyCell> cells;
      for (auto fam : detail::families_for(cfg, s))
        for (auto n : cfg.nutrients) {
          const auto bp = stage_dir(ctx.out, "tune") / (detail::study_key(s, f.id(), fam, n) + ".best.json");
          detail::hash_input(m, ctx.out, bp);
          const auto j = json::parse(read_text_file(bp.string()));
          TrialRecord rec;
          rec.id = j.at("best_trial").get<std::size_t>();
          rec.config = params_from_json(j.at("params"));
          rec.val_rmse = j.at("val_rmse").get<double>();
          cells.push_back({fam, n, {rec}});
        }
      for (const auto& t : report_best(cells)) {
        const std::string stem = "hparams_" + std::string(family_id(t.family)) + "_" +
                                 std::string(strategy_name(s)) + "_" + f.id();
        write_text_file((dir / (stem + ".txt")).string(), format_best_table(t));
        write_text_file((dir / (stem + ".tsv")).string(), best_table_tsv(t));
        m.outputs.push_back("reports/" + stem + ".txt");
        m.outputs.push_back("reports/" + stem + ".tsv");
      }
    }
  write_manifest(ctx.out, std::move(m));
}

inline void run_stage(std::string_view stage, const StageContext& ctx) {
  if (stage == "synth") return run_synth(ctx);
  if (stage == "ingest") return run_ingest(ctx);
  if (stage == "preprocess") return run_preprocess(ctx);
  if (stage == "split") return run_split(ctx);
  if (stage == "tune") return run_tune(ctx);
  if (stage == "train") return run_train(ctx);
  if (stage == "evaluate") return run_evaluate(ctx);
  if (stage == "report") return run_report(ctx);
  throw Error("unknown stage '" + std::string(stage) + "'");
}

/// Every stage after synth, in order.
inline void run_chain(const StageContext& ctx, bool with_synth) {
  for (auto s : kStages) {
    if (s == "synth" && !with_synth) continue;
    run_stage(s, ctx);
  }
}

}  // namespace soilpipe::pipeline
