#pragma once

// Dataset model shared by the whole pipeline: soil samples, nutrients and
// their detection limits, feature-set configurations, and feature tables kept
// as paired raw / normalized views.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "soilpipe/core/errors.hpp"
#include "soilpipe/core/matrix.hpp"
#include "soilpipe/core/text.hpp"

namespace soilpipe {

using PointId = std::int64_t;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Nutrients

enum class Nutrient { pH_CaCl2, pH_H2O, N, P, K };

inline constexpr std::array<Nutrient, 5> kAllNutrients = {Nutrient::pH_CaCl2, Nutrient::pH_H2O,
                                                          Nutrient::N, Nutrient::P, Nutrient::K};

struct NutrientInfo {
  Nutrient id;
  std::string_view name;
  std::string_view description;
  std::string_view unit;
  /// Single-valued detection limit. pH is specified as a measurable range
  /// (2-10) instead, so it has none.
  std::optional<double> lod;
  double range_lo;
  double range_hi;
};

inline const NutrientInfo& nutrient_info(Nutrient n) {
  static const std::array<NutrientInfo, 5> table = {{
      {Nutrient::pH_CaCl2, "pH_CaCl2", "pH in CaCl2", "-", std::nullopt, 2.0, 10.0},
      {Nutrient::pH_H2O, "pH_H2O", "pH in H2O", "-", std::nullopt, 2.0, 10.0},
      {Nutrient::N, "N", "Nitrogen", "g/kg", 0.2, 0.0, kNaN},
      {Nutrient::P, "P", "Phosphorus", "mg/kg", 10.0, 0.0, kNaN},
      {Nutrient::K, "K", "Potassium", "mg/kg", 10.0, 0.0, kNaN},
  }};
  return table[static_cast<std::size_t>(n)];
}

inline std::string_view nutrient_name(Nutrient n) { return nutrient_info(n).name; }

inline std::optional<Nutrient> try_parse_nutrient(std::string_view s) {
  for (auto n : kAllNutrients)
    if (nutrient_info(n).name == s) return n;
  return std::nullopt;
}

inline Nutrient parse_nutrient(std::string_view s) {
  if (auto n = try_parse_nutrient(s)) return *n;
  throw Error("unknown nutrient '" + std::string(s) + "'");
}

/// Column order and headers of the published result tables.
inline constexpr std::array<Nutrient, 5> kReportNutrientOrder = {Nutrient::pH_CaCl2, Nutrient::pH_H2O,
                                                                 Nutrient::P, Nutrient::N, Nutrient::K};

inline std::string_view nutrient_column_header(Nutrient n) {
  switch (n) {
    case Nutrient::pH_CaCl2: return "pH_CaCl2";
    case Nutrient::pH_H2O: return "pH_H2O";
    case Nutrient::P: return "Phosphorus";
    case Nutrient::N: return "Nitrogen";
    case Nutrient::K: return "Potassium";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Samples

using Date = std::chrono::year_month_day;

inline std::optional<Date> try_parse_date(std::string_view s) {
  s = trim(s);
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::from_chars(s.data(), s.data() + 4, y).ptr != s.data() + 4) return std::nullopt;
  if (std::from_chars(s.data() + 5, s.data() + 7, m).ptr != s.data() + 7) return std::nullopt;
  if (std::from_chars(s.data() + 8, s.data() + 10, d).ptr != s.data() + 10) return std::nullopt;
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) return std::nullopt;
  return date;
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

class BoundsError : public Error {
 public:
  BoundsError(PointId id, double lat, double lon)
      : Error("point " + std::to_string(id) + ": coordinates out of range (lat " +
              format_double(lat) + ", lon " + format_double(lon) + ")"),
        point_id_(id) {}
  PointId point_id() const { return point_id_; }

 private:
  PointId point_id_;
};

inline bool valid_coordinates(double lat, double lon) {
  return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

/// One georeferenced soil sample. A nutrient flagged in `below_lod` holds an
/// imputed value, never the raw reading.
struct SampleRecord {
  PointId point_id = 0;
  double lat = 0.0;
  double lon = 0.0;
  Date sample_date{};
  std::map<Nutrient, double> targets;
  std::map<Nutrient, bool> below_lod;

  bool flagged(Nutrient n) const {
    auto it = below_lod.find(n);
    return it != below_lod.end() && it->second;
  }
};

class MissingTarget : public Error {
 public:
  MissingTarget(PointId id, Nutrient n)
      : Error("point " + std::to_string(id) + ": no value for " + std::string(nutrient_name(n))),
        point_id_(id) {}
  PointId point_id() const { return point_id_; }

 private:
  PointId point_id_;
};

/// Target values in sample order, on the original measurement scale.
inline std::vector<double> target_vector(std::span<const SampleRecord> samples, Nutrient nutrient) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto it = s.targets.find(nutrient);
    if (it == s.targets.end() || std::isnan(it->second)) throw MissingTarget(s.point_id, nutrient);
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature-set configuration

/// The twelve Sentinel-2 Level-2A bands, in canonical column order.
inline constexpr std::array<std::string_view, 12> kBandNames = {
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12"};

inline constexpr std::array<std::string_view, 9> kWeatherColumns = {
    "OW_temp",     "OW_feels_like", "OW_dew_point", "OW_humidity", "OW_pressure",
    "OW_wind_speed", "OW_clouds",   "OW_sunrise",   "OW_sunset"};

inline constexpr std::size_t kNeighborWindow = 9;
inline constexpr std::size_t kWeatherCount = 9;
inline constexpr std::size_t kYieldCount = 27;
inline constexpr std::size_t kEmbeddingDim = 1024;

/// Name of one pixel in the 3x3 window around the sample; (1,1) is the center.
inline std::string neighbor_column(std::string_view band, int row, int col) {
  return std::string(band) + "_r" + std::to_string(row) + "c" + std::to_string(col);
}

inline std::string embedding_column(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "embedding_%04zu", i);
  return buf;
}

struct FeatureSetConfig {
  bool surr = false;
  bool wthr = false;
  bool cry = false;
  bool clay = false;

  std::size_t column_count() const {
    return kBandNames.size() * (surr ? kNeighborWindow : 1) + (wthr ? kWeatherCount : 0) +
           (cry ? kYieldCount : 0) + (clay ? kEmbeddingDim : 0);
  }

  /// Stable identifier used in file names, e.g. "base", "surr_wthr_cry".
  std::string id() const {
    std::string out = "base";
    if (surr) out += "_surr";
    if (wthr) out += "_wthr";
    if (cry) out += "_cry";
    if (clay) out += "_clay";
    return out == "base" ? out : out.substr(5);
  }

  /// Column label used by the extended performance tables.
  std::string label() const {
    if (!surr && !wthr && !cry && !clay) return "BASE";
    if (surr && wthr && cry && !clay) return "Previous+ SURR, WTHR, CRY";
    if (surr && wthr && cry && clay) return "Previous+ CLAY";
    std::string out = "BASE";
    if (surr) out += "+SURR";
    if (wthr) out += "+WTHR";
    if (cry) out += "+CRY";
    if (clay) out += "+CLAY";
    return out;
  }

  static FeatureSetConfig base() { return {}; }
  static FeatureSetConfig extended() { return {true, true, true, false}; }
  static FeatureSetConfig extended_clay() { return {true, true, true, true}; }

  friend bool operator==(const FeatureSetConfig&, const FeatureSetConfig&) = default;
};

inline FeatureSetConfig parse_feature_set(std::string_view id) {
  FeatureSetConfig cfg;
  std::string s(id);
  if (s == "base" || s == "BASE") return cfg;
  for (auto part : split_fields(s, '_')) {
    if (part == "base") continue;
    if (part == "surr") cfg.surr = true;
    else if (part == "wthr") cfg.wthr = true;
    else if (part == "cry") cfg.cry = true;
    else if (part == "clay") cfg.clay = true;
    else throw Error("unknown feature source '" + std::string(part) + "' in '" + s + "'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Source columns and table assembly

/// A set of named columns keyed by sample. Ingestion produces one block per
/// source (pixels, weather, yield, embeddings).
struct ColumnBlock {
  std::vector<std::string> names;
  std::unordered_map<PointId, std::vector<double>> rows;

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
};

struct SourceColumns {
  ColumnBlock pixels;
  ColumnBlock weather;
  ColumnBlock yield;
  ColumnBlock embeddings;
};

class MissingColumn : public Error {
 public:
  MissingColumn(PointId id, std::string column)
      : Error("point " + std::to_string(id) + ": missing column '" + column + "'"),
        point_id_(id),
        column_(std::move(column)) {}
  PointId point_id() const { return point_id_; }
  const std::string& column() const { return column_; }

 private:
  PointId point_id_;
  std::string column_;
};

class DuplicateKey : public Error {
 public:
  explicit DuplicateKey(PointId id)
      : Error("duplicate point_id " + std::to_string(id)), point_id_(id) {}
  PointId point_id() const { return point_id_; }

 private:
  PointId point_id_;
};

/// Columnar feature matrix. The raw view is immutable; normalization yields a
/// new table carrying both views plus the raw per-column extrema.
class FeatureTable {
 public:
  FeatureTable() = default;

  FeatureTable(std::vector<std::string> column_names, std::vector<PointId> row_keys, Matrix raw)
      : names_(std::move(column_names)), keys_(std::move(row_keys)), raw_(std::move(raw)) {
    if (raw_.rows() != keys_.size() || raw_.cols() != names_.size())
      throw Error("feature table shape does not match its labels");
    std::unordered_set<std::string> seen_names;
    for (const auto& n : names_)
      if (!seen_names.insert(n).second) throw Error("duplicate column name '" + n + "'");
    std::unordered_set<PointId> seen_keys;
    for (auto k : keys_)
      if (!seen_keys.insert(k).second) throw DuplicateKey(k);
  }

  const std::vector<std::string>& column_names() const { return names_; }
  const std::vector<PointId>& row_keys() const { return keys_; }
  const Matrix& raw() const { return raw_; }
  std::size_t rows() const { return raw_.rows(); }
  std::size_t cols() const { return raw_.cols(); }

  bool has_normalized() const { return normalized_.has_value(); }
  const Matrix& normalized() const {
    if (!normalized_) throw Error("feature table has no normalized view");
    return *normalized_;
  }
  const std::vector<double>& col_min() const { return col_min_; }
  const std::vector<double>& col_max() const { return col_max_; }

  FeatureTable with_normalized(Matrix normalized, std::vector<double> col_min,
                               std::vector<double> col_max) const {
    if (normalized.rows() != raw_.rows() || normalized.cols() != raw_.cols())
      throw Error("normalized view shape does not match raw view");
    FeatureTable out = *this;
    out.normalized_ = std::move(normalized);
    out.col_min_ = std::move(col_min);
    out.col_max_ = std::move(col_max);
    return out;
  }

  std::optional<std::size_t> row_of(PointId key) const {
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (keys_[i] == key) return i;
    return std::nullopt;
  }

  std::optional<std::size_t> column_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

 private:
  std::vector<std::string> names_;
  std::vector<PointId> keys_;
  Matrix raw_;
  std::optional<Matrix> normalized_;
  std::vector<double> col_min_;
  std::vector<double> col_max_;
};

/// Column names emitted for a configuration, in frozen order: bands (center
/// pixels, or band-major 3x3 windows with `surr`), weather, yield, embeddings.
/// Yield names come from the source block because crop columns are opaque.
inline std::vector<std::string> required_pixel_columns(const FeatureSetConfig& config) {
  std::vector<std::string> out;
  for (auto band : kBandNames) {
    if (!config.surr) {
      out.emplace_back(band);
      continue;
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.push_back(neighbor_column(band, r, c));
  }
  return out;
}

namespace detail {

struct ColumnSource {
  const ColumnBlock* block;
  std::vector<std::size_t> indices;  // into block row vectors
};

inline ColumnSource resolve_columns(const ColumnBlock& block, std::span<const std::string> wanted,
                                    std::span<const std::string> fallback) {
  ColumnSource src{&block, {}};
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    auto idx = block.index_of(wanted[i]);
    if (!idx && !fallback.empty()) idx = block.index_of(fallback[i]);
    if (!idx) throw MissingColumn(-1, wanted[i]);
    src.indices.push_back(*idx);
  }
  return src;
}

}  // namespace detail

inline FeatureTable assemble_feature_table(std::span<const SampleRecord> samples,
                                           const SourceColumns& sources,
                                           const FeatureSetConfig& config) {
  std::vector<std::string> names;
  std::vector<detail::ColumnSource> parts;

  auto pixel_names = required_pixel_columns(config);
  std::vector<std::string> pixel_fallback;
  if (!config.surr)
    for (auto band : kBandNames) pixel_fallback.push_back(neighbor_column(band, 1, 1));
  parts.push_back(detail::resolve_columns(sources.pixels, pixel_names, pixel_fallback));
  names.insert(names.end(), pixel_names.begin(), pixel_names.end());

  if (config.wthr) {
    std::vector<std::string> w(kWeatherColumns.begin(), kWeatherColumns.end());
    parts.push_back(detail::resolve_columns(sources.weather, w, {}));
    names.insert(names.end(), w.begin(), w.end());
  }
  if (config.cry) {
    if (sources.yield.names.size() != kYieldCount)
      throw MissingColumn(-1, "yield source has " + std::to_string(sources.yield.names.size()) +
                                  " columns, expected " + std::to_string(kYieldCount));
    parts.push_back(detail::resolve_columns(sources.yield, sources.yield.names, {}));
    names.insert(names.end(), sources.yield.names.begin(), sources.yield.names.end());
  }
  if (config.clay) {
    std::vector<std::string> e;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) e.push_back(embedding_column(i));
    parts.push_back(detail::resolve_columns(sources.embeddings, e, {}));
    names.insert(names.end(), e.begin(), e.end());
  }

  std::unordered_set<PointId> seen;
  std::vector<PointId> keys;
  Matrix raw(samples.size(), names.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const PointId id = samples[r].point_id;
    if (!seen.insert(id).second) throw DuplicateKey(id);
    keys.push_back(id);
    std::size_t col = 0;
    std::size_t name_base = 0;
    for (const auto& part : parts) {
      auto it = part.block->rows.find(id);
      if (it == part.block->rows.end()) throw MissingColumn(id, names[name_base]);
      for (auto idx : part.indices) {
        if (idx >= it->second.size()) throw MissingColumn(id, names[col]);
        raw(r, col++) = it->second[idx];
      }
      name_base = col;
    }
  }
  return FeatureTable(std::move(names), std::move(keys), std::move(raw));
}

// ---------------------------------------------------------------------------
// Delimited serialization: header "point_id,<columns>", NA for not-a-value.

inline void write_matrix_csv(std::ostream& out, std::span<const std::string> names,
                             std::span<const PointId> keys, const Matrix& m) {
  out << "point_id";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << keys[r];
    for (double v : m.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
}

/// Writes the raw view (or the normalized view when `normalized` is set).
inline void write_feature_table(std::ostream& out, const FeatureTable& table,
                                bool normalized = false) {
  write_matrix_csv(out, table.column_names(), table.row_keys(),
                   normalized ? table.normalized() : table.raw());
}

inline std::string feature_table_to_string(const FeatureTable& table, bool normalized = false) {
  std::ostringstream ss;
  write_feature_table(ss, table, normalized);
  return ss.str();
}

inline FeatureTable parse_feature_table(std::istream& in) {
  auto file = parse_delimited(in);
  if (file.header.empty() || file.header.front() != "point_id")
    throw ParseError(1, "first column must be point_id");
  std::vector<std::string> names(file.header.begin() + 1, file.header.end());
  std::vector<PointId> keys;
  Matrix raw(file.rows.size(), names.size());
  for (std::size_t r = 0; r < file.rows.size(); ++r) {
    const auto line = file.line_numbers[r];
    keys.push_back(parse_int(file.rows[r][0], line));
    for (std::size_t c = 0; c < names.size(); ++c)
      raw(r, c) = parse_double(file.rows[r][c + 1], line);
  }
  return FeatureTable(std::move(names), std::move(keys), std::move(raw));
}

inline FeatureTable read_feature_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_feature_table(in);
}

inline void save_feature_table(const std::string& path, const FeatureTable& table,
                               bool normalized = false) {
  write_text_file(path, feature_table_to_string(table, normalized));
}

}  // namespace soilpipe
