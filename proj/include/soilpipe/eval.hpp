#pragma once

// Metrics, plan-checked evaluation, importance ranking and report files.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "soilpipe/core/parallel.hpp"
#include "soilpipe/core/random.hpp"
#include "soilpipe/core/text.hpp"
#include "soilpipe/model.hpp"
#include "soilpipe/preprocess.hpp"
#include "soilpipe/split.hpp"
#include "soilpipe/svg.hpp"

namespace soilpipe {

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : Error("length mismatch: " + std::to_string(a) + " predictions vs " + std::to_string(b) + " targets") {}
};

class EmptyInput : public Error {
 public:
  EmptyInput() : Error("metric needs at least one value") {}
};

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw LengthMismatch(pred.size(), truth.size());
  if (pred.empty()) throw EmptyInput();
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Mean and sample standard deviation (n - 1).
inline std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) throw EmptyInput();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// ---------------------------------------------------------------------------
// Evaluation

class PlanMismatch : public Error {
 public:
  PlanMismatch(const std::string& model_hash, const std::string& plan_hash)
      : Error("model was trained under plan " + model_hash + " but evaluated against plan " + plan_hash) {}
};

struct EvalRow {
  ModelFamily family = ModelFamily::Gbt;
  Nutrient nutrient = Nutrient::pH_CaCl2;
  std::string feature_set = "base";
  SplitStrategy strategy = SplitStrategy::Single;
  double rmse_test = std::numeric_limits<double>::quiet_NaN();
  /// Mean validation RMSE over CV folds; NaN for single splits.
  double rmse_average = std::numeric_limits<double>::quiet_NaN();
  double target_mean = std::numeric_limits<double>::quiet_NaN();
  double target_std = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
};

/// Raw feature rows and targets of the given ids, in id order.
inline std::pair<Matrix, std::vector<double>> partition_rows(const FeatureTable& table,
                                                             std::span<const SampleRecord> samples,
                                                             std::span<const PointId> ids, Nutrient nutrient) {
  std::unordered_map<PointId, std::size_t> row_index, sample_index;
  for (std::size_t i = 0; i < table.row_keys().size(); ++i) row_index[table.row_keys()[i]] = i;
  for (std::size_t i = 0; i < samples.size(); ++i) sample_index[samples[i].point_id] = i;
  std::vector<std::size_t> rows;
  std::vector<SampleRecord> picked;
  for (auto id : ids) {
    auto r = row_index.find(id);
    if (r == row_index.end()) throw MissingColumn(id, "feature row");
    auto s = sample_index.find(id);
    if (s == sample_index.end()) throw MissingTarget(id, nutrient);
    rows.push_back(r->second);
    picked.push_back(samples[s->second]);
  }
  return {table.raw().select_rows(rows), target_vector(picked, nutrient)};
}

/// Scores the artifact on the plan's test partition only. Features are
/// scaled with the artifact's own statistics. Target mean and standard
/// deviation cover every sample of the plan on the raw scale.
inline EvalRow evaluate(const ModelArtifact& model, const SplitPlan& plan, const FeatureTable& table,
                        std::span<const SampleRecord> samples, Nutrient nutrient) {
  const auto hash = plan_hash(plan);
  if (model.plan_hash != hash) throw PlanMismatch(model.plan_hash, hash);
  if (table.column_names() != model.feature_names) throw Error("feature columns differ from the model's");

  EvalRow row;
  row.family = model.family;
  row.nutrient = nutrient;
  row.feature_set = model.feature_set;
  row.strategy = plan.strategy;

  const auto test_ids = plan.ids_with_role(Role::Test);
  auto [X_raw, y] = partition_rows(table, samples, test_ids, nutrient);
  const auto X = apply_stats(X_raw, model.stats);
  row.rmse_test = rmse(predict(model, X), y);

  std::vector<PointId> all;
  for (const auto& a : plan.assignments) all.push_back(a.point_id);
  std::unordered_map<PointId, const SampleRecord*> by_id;
  for (const auto& s : samples) by_id[s.point_id] = &s;
  std::vector<SampleRecord> everyone;
  for (auto id : all) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw MissingTarget(id, nutrient);
    everyone.push_back(*it->second);
  }
  std::tie(row.target_mean, row.target_std) = mean_std(target_vector(everyone, nutrient));

  row.n_test = test_ids.size();
  const std::size_t non_test = plan.assignments.size() - row.n_test;
  if (plan.strategy == SplitStrategy::SpatialGrid && plan.folds > 0) {
    if (!model.fold_rmse.empty())
      row.rmse_average = std::accumulate(model.fold_rmse.begin(), model.fold_rmse.end(), 0.0) /
                         static_cast<double>(model.fold_rmse.size());
    row.n_val = non_test / static_cast<std::size_t>(plan.folds);
    row.n_train = non_test - row.n_val;
  } else {
    row.n_train = non_test;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Permutation importance

using BatchPredictor = std::function<std::vector<double>(const Matrix&)>;

/// Mean RMSE increase when one column is shuffled, per feature, averaged over
/// `repeats`. Shuffles use a generator seeded from (seed, feature, repeat),
/// so results do not depend on `workers`. Sorted by descending score, ties
/// by feature index.
inline std::vector<FeatureScore> permutation_importance(const BatchPredictor& predict_rows, const Matrix& X,
                                                        std::span<const double> y, int repeats,
                                                        std::uint64_t seed,
                                                        std::span<const std::string> names = {},
                                                        unsigned workers = 1) {
  if (repeats < 1) throw Error("permutation importance needs at least one repeat");
  const double base = rmse(predict_rows(X), y);
  const std::size_t d = X.cols();
  std::vector<double> score(d, 0.0);
  parallel_for(d, workers, [&](std::size_t f) {
    Matrix shuffled = X;
    auto column = X.column(f);
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
      Rng rng(derive_seed(derive_seed(seed, f), static_cast<std::uint64_t>(r)));
      auto perm = column;
      rng.shuffle(std::span(perm));
      for (std::size_t i = 0; i < X.rows(); ++i) shuffled(i, f) = perm[i];
      total += rmse(predict_rows(shuffled), y) - base;
    }
    score[f] = total / static_cast<double>(repeats);
  });
  std::vector<FeatureScore> out;
  for (std::size_t f = 0; f < d; ++f)
    out.push_back({f, f < names.size() ? names[f] : "f" + std::to_string(f), score[f]});
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureScore& a, const FeatureScore& b) { return a.score > b.score; });
  return out;
}

inline std::vector<FeatureScore> permutation_importance(const ModelArtifact& model, const Matrix& X,
                                                        std::span<const double> y, int repeats,
                                                        std::uint64_t seed, unsigned workers = 1) {
  return permutation_importance([&](const Matrix& m) { return predict(model, m); }, X, y, repeats, seed,
                                model.feature_names, workers);
}

// ---------------------------------------------------------------------------
// Reports

struct ImportanceReport {
  ModelFamily family = ModelFamily::Gbt;
  Nutrient nutrient = Nutrient::pH_CaCl2;
  std::string method;  ///< "gain" or "permutation"
  std::vector<FeatureScore> scores;
};

struct CorrelationReport {
  std::string name;
  CorrelationMatrix matrix;
};

struct ReportInputs {
  std::vector<EvalRow> rows;
  std::vector<ImportanceReport> importances;
  std::vector<CorrelationReport> correlations;
};

inline constexpr std::size_t kImportanceTopK = 20;

namespace detail {

/// Code points, so UTF-8 cells such as "±" pad correctly.
inline std::size_t display_width(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

/// Pipe table with a caption line; column widths fit the widest cell.
inline std::string text_table(const std::string& caption, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
  }
  std::ostringstream out;
  out << caption << "\n\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << '|';
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < rows[r].size() ? rows[r][c] : "";
      out << ' ' << cell << std::string(width[c] - display_width(cell), ' ') << " |";
    }
    out << '\n';
    if (r == 0) {
      out << '|';
      for (auto w : width) out << std::string(w + 2, '-') << '|';
      out << '\n';
    }
  }
  return out.str();
}

inline std::string tsv(const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (const auto& row : rows) out << join(row, "\t") << '\n';
  return out.str();
}

inline std::string mean_pm_std(const EvalRow& r) {
  return format_fixed(r.target_mean, 2) + " ± " + format_fixed(r.target_std, 2);
}

inline std::string unit_of(Nutrient n) { return std::string(nutrient_info(n).unit); }

inline std::string long_nutrient_label(Nutrient n) {
  switch (n) {
    case Nutrient::P: return "Phosphorus, extractable (P)";
    case Nutrient::N: return "Nitrogen, extractable (N)";
    case Nutrient::K: return "Potassium, extractable (K)";
    default: return std::string(nutrient_info(n).description);
  }
}

inline const EvalRow* find_row(std::span<const EvalRow> rows, ModelFamily f, Nutrient n, const std::string& fs,
                               SplitStrategy s) {
  for (const auto& r : rows)
    if (r.family == f && r.nutrient == n && r.feature_set == fs && r.strategy == s) return &r;
  return nullptr;
}

}  // namespace detail

struct RenderedFile {
  std::string name;
  std::string content;
};

/// Per feature configuration: model, nutrient, unit, mean ± std, test RMSE
/// on the single split, one row per (model, nutrient).
inline std::vector<RenderedFile> performance_tables(std::span<const EvalRow> rows) {
  std::vector<std::string> configs;
  for (const auto& r : rows)
    if (r.strategy == SplitStrategy::Single &&
        std::find(configs.begin(), configs.end(), r.feature_set) == configs.end())
      configs.push_back(r.feature_set);
  std::sort(configs.begin(), configs.end(), [](const std::string& a, const std::string& b) {
    return parse_feature_set(a).column_count() < parse_feature_set(b).column_count();
  });
  std::vector<RenderedFile> files;
  for (const auto& fs : configs) {
    std::vector<std::vector<std::string>> text{{"Model Variant", "Nutrient", "Unit", "(Mean ± StdDev)", "RMSE (Test)"}};
    std::vector<std::vector<std::string>> tsv{
        {"model", "nutrient", "unit", "mean", "std", "rmse_test", "n_train", "n_test"}};
    for (auto f : kAllFamilies) {
      bool first = true;
      for (auto n : kReportNutrientOrder) {
        const auto* r = detail::find_row(rows, f, n, fs, SplitStrategy::Single);
        if (!r) continue;
        text.push_back({first ? std::string(family_label(f)) : "", detail::long_nutrient_label(n),
                        detail::unit_of(n), detail::mean_pm_std(*r), format_fixed(r->rmse_test, 2)});
        tsv.push_back({std::string(family_id(f)), std::string(nutrient_name(n)), detail::unit_of(n),
                       format_double(r->target_mean), format_double(r->target_std), format_double(r->rmse_test),
                       std::to_string(r->n_train), std::to_string(r->n_test)});
        first = false;
      }
    }
    const std::string caption = "Performance Results Test Dataset (" + parse_feature_set(fs).label() + ")";
    files.push_back({"perf_" + fs + ".txt", detail::text_table(caption, text)});
    files.push_back({"perf_" + fs + ".tsv", detail::tsv(tsv)});
  }
  return files;
}

/// Per model: BASE against each extended configuration present, best (lowest)
/// RMSE per row marked with asterisks in the text and named in the TSV.
inline std::vector<RenderedFile> extended_tables(std::span<const EvalRow> rows) {
  const std::vector<FeatureSetConfig> order{FeatureSetConfig::base(), FeatureSetConfig::extended(),
                                            FeatureSetConfig::extended_clay()};
  std::vector<RenderedFile> files;
  for (auto f : kAllFamilies) {
    std::vector<FeatureSetConfig> present;
    for (const auto& cfg : order)
      for (const auto& r : rows)
        if (r.family == f && r.strategy == SplitStrategy::Single && r.feature_set == cfg.id()) {
          present.push_back(cfg);
          break;
        }
    if (present.size() < 2) continue;
    std::vector<std::string> header{"Nutrient", "Unit", "Mean ± StdDev"};
    std::vector<std::string> tsv_header{"nutrient", "unit", "mean", "std"};
    for (const auto& cfg : present) {
      header.push_back("RMSE " + cfg.label());
      tsv_header.push_back(cfg.id());
    }
    tsv_header.push_back("best");
    std::vector<std::vector<std::string>> text{header}, tsv{tsv_header};
    for (auto n : kReportNutrientOrder) {
      std::vector<const EvalRow*> cells;
      const EvalRow* any = nullptr;
      for (const auto& cfg : present) {
        cells.push_back(detail::find_row(rows, f, n, cfg.id(), SplitStrategy::Single));
        if (!any) any = cells.back();
      }
      if (!any) continue;
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] && !std::isnan(cells[i]->rmse_test) && (!best || cells[i]->rmse_test < cells[*best]->rmse_test))
          best = i;
      std::vector<std::string> line{std::string(nutrient_info(n).description), detail::unit_of(n),
                                    detail::mean_pm_std(*any)};
      std::vector<std::string> tline{std::string(nutrient_name(n)), detail::unit_of(n),
                                     format_double(any->target_mean), format_double(any->target_std)};
      for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string v = cells[i] ? format_fixed(cells[i]->rmse_test, 2) : std::string(kNotAValue);
        if (best && *best == i) v = "**" + v + "**";
        line.push_back(std::move(v));
        tline.push_back(cells[i] ? format_double(cells[i]->rmse_test) : std::string(kNotAValue));
      }
      tline.push_back(best ? present[*best].id() : std::string(kNotAValue));
      text.push_back(std::move(line));
      tsv.push_back(std::move(tline));
    }
    const std::string caption = "Extended Model: " + std::string(family_label(f)) + " Performance";
    files.push_back({"perf_extended_" + std::string(family_id(f)) + ".txt", detail::text_table(caption, text)});
    files.push_back({"perf_extended_" + std::string(family_id(f)) + ".tsv", detail::tsv(tsv)});
  }
  return files;
}

/// Single split against spatial CV for every (model, feature set) evaluated
/// under both strategies.
inline std::vector<RenderedFile> spatial_tables(std::span<const EvalRow> rows) {
  std::vector<RenderedFile> files;
  std::vector<std::pair<ModelFamily, std::string>> keys;
  for (const auto& r : rows)
    if (r.strategy == SplitStrategy::SpatialGrid &&
        std::find(keys.begin(), keys.end(), std::pair(r.family, r.feature_set)) == keys.end())
      keys.emplace_back(r.family, r.feature_set);
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first)
      return std::find(kAllFamilies.begin(), kAllFamilies.end(), a.first) <
             std::find(kAllFamilies.begin(), kAllFamilies.end(), b.first);
    return parse_feature_set(a.second).column_count() < parse_feature_set(b.second).column_count();
  });
  for (const auto& [f, fs] : keys) {
    std::vector<std::vector<std::string>> text{
        {"Nutrient", "Unit", "RMSE_Test (Single Split)", "Spatial CV RMSE_Average", "Spatial CV RMSE_Test"}};
    std::vector<std::vector<std::string>> tsv{
        {"nutrient", "unit", "single_rmse_test", "spatial_rmse_average", "spatial_rmse_test"}};
    for (auto n : kReportNutrientOrder) {
      const auto* single = detail::find_row(rows, f, n, fs, SplitStrategy::Single);
      const auto* spatial = detail::find_row(rows, f, n, fs, SplitStrategy::SpatialGrid);
      if (!spatial) continue;
      const double s = single ? single->rmse_test : std::numeric_limits<double>::quiet_NaN();
      text.push_back({std::string(nutrient_info(n).description), detail::unit_of(n), format_fixed(s, 2),
                      format_fixed(spatial->rmse_average, 2), format_fixed(spatial->rmse_test, 2)});
      tsv.push_back({std::string(nutrient_name(n)), detail::unit_of(n), format_double(s),
                     format_double(spatial->rmse_average), format_double(spatial->rmse_test)});
    }
    const std::string caption = "Comparison " + std::string(family_label(f)) + " Results: Single Split vs. Spatial CV (" +
                                parse_feature_set(fs).label() + ")";
    const std::string stem = "perf_spatial_" + std::string(family_id(f)) + "_" + fs;
    files.push_back({stem + ".txt", detail::text_table(caption, text)});
    files.push_back({stem + ".tsv", detail::tsv(tsv)});
  }
  return files;
}

inline std::vector<RenderedFile> importance_files(const ImportanceReport& imp) {
  const auto top = std::min(kImportanceTopK, imp.scores.size());
  std::vector<Bar> bars;
  std::ostringstream tsv;
  tsv << "rank\tfeature\tscore\tmethod\n";
  for (std::size_t i = 0; i < top; ++i) {
    bars.push_back({imp.scores[i].name, imp.scores[i].score});
    tsv << i + 1 << '\t' << imp.scores[i].name << '\t' << format_double(imp.scores[i].score) << '\t' << imp.method
        << '\n';
  }
  const std::string stem =
      "importance_" + std::string(family_id(imp.family)) + "_" + std::string(nutrient_name(imp.nutrient));
  const std::string title = std::string(family_label(imp.family)) + " " + std::string(nutrient_name(imp.nutrient)) +
                            ": top " + std::to_string(top) + " features (" + imp.method + ")";
  return {{stem + ".svg", bar_chart_svg(title, bars)}, {stem + ".tsv", tsv.str()}};
}

inline std::vector<RenderedFile> correlation_files(const CorrelationReport& c) {
  return {{"corr_" + c.name + ".svg", heatmap_svg("Correlation: " + c.name, c.matrix.labels, c.matrix.r)},
          {"corr_" + c.name + ".tsv", correlation_to_tsv(c.matrix)}};
}

inline std::vector<RenderedFile> render_report_files(const ReportInputs& in) {
  std::vector<RenderedFile> files;
  auto append = [&](std::vector<RenderedFile> more) {
    for (auto& f : more) files.push_back(std::move(f));
  };
  append(performance_tables(in.rows));
  append(extended_tables(in.rows));
  append(spatial_tables(in.rows));
  for (const auto& imp : in.importances) append(importance_files(imp));
  for (const auto& c : in.correlations) append(correlation_files(c));
  return files;
}

/// Writes every report file under `dir` and returns their names.
inline std::vector<std::string> render_reports(const ReportInputs& in, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> names;
  for (const auto& f : render_report_files(in)) {
    write_text_file((dir / f.name).string(), f.content);
    names.push_back(f.name);
  }
  return names;
}

}  // namespace soilpipe
