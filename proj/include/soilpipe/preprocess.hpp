#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "soilpipe/core/random.hpp"
#include "soilpipe/tabular.hpp"

namespace soilpipe {

// ---------------------------------------------------------------------------
// Below-LOD imputation

struct ConstantMidpoint {};
struct UniformRandom {
  std::uint64_t seed = 0;
};
using ImputeStrategy = std::variant<ConstantMidpoint, UniformRandom>;

/// Replaces every flagged value of `nutrient`: LOD/2 for the midpoint
/// strategy, a draw from [0, LOD) for the random one. Unflagged values are
/// untouched. Throws for nutrients without a single-valued LOD (pH).
inline std::vector<SampleRecord> impute_below_lod(std::vector<SampleRecord> samples, Nutrient nutrient,
                                                  const ImputeStrategy& strategy) {
  const auto& info = nutrient_info(nutrient);
  if (!info.lod) throw Error(std::string(info.name) + " has no numeric detection limit");
  const double lod = *info.lod;
  std::optional<Rng> rng;
  if (auto* u = std::get_if<UniformRandom>(&strategy)) rng.emplace(u->seed);
  for (auto& s : samples) {
    if (!s.flagged(nutrient)) continue;
    s.targets[nutrient] = rng ? rng->uniform() * lod : lod / 2.0;
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormMethod { MinMax, LogMinMax };

inline std::string_view norm_method_name(NormMethod m) {
  return m == NormMethod::MinMax ? "minmax" : "log_minmax";
}

inline NormMethod parse_norm_method(std::string_view s) {
  if (s == "minmax") return NormMethod::MinMax;
  if (s == "log_minmax") return NormMethod::LogMinMax;
  throw Error("unknown normalization method '" + std::string(s) + "'");
}

/// Per-column scaling domain. For log_minmax, min/max are taken after the
/// ln(1+x) transform.
struct NormalizationStats {
  NormMethod method = NormMethod::MinMax;
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const { return min.size(); }
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

class NegativeUnderLog : public Error {
 public:
  explicit NegativeUnderLog(std::string column)
      : Error("column '" + column + "' has negative values; log normalization undefined"),
        column_(std::move(column)) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

namespace detail {

inline double scale_value(double x, NormMethod method, double lo, double hi) {
  if (std::isnan(x)) return x;
  if (method == NormMethod::LogMinMax) x = std::log1p(x);
  if (!(hi > lo)) return 0.0;
  return (x - lo) / (hi - lo);
}

}  // namespace detail

struct NormalizedTable {
  FeatureTable table;
  NormalizationStats stats;
};

/// Adds a normalized view. NaN entries stay NaN and are ignored by the
/// extrema; constant columns map to 0.
inline NormalizedTable normalize(const FeatureTable& table, NormMethod method = NormMethod::MinMax) {
  const Matrix& raw = table.raw();
  const std::size_t n = raw.rows(), d = raw.cols();
  std::vector<double> raw_min(d, kNaN), raw_max(d, kNaN);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      const double v = raw(r, c);
      if (std::isnan(v)) continue;
      if (std::isnan(raw_min[c]) || v < raw_min[c]) raw_min[c] = v;
      if (std::isnan(raw_max[c]) || v > raw_max[c]) raw_max[c] = v;
    }
    if (method == NormMethod::LogMinMax && raw_min[c] < 0.0)
      throw NegativeUnderLog(table.column_names()[c]);
  }
  NormalizationStats stats{method, raw_min, raw_max};
  if (method == NormMethod::LogMinMax)
    for (std::size_t c = 0; c < d; ++c) {
      stats.min[c] = std::log1p(raw_min[c]);
      stats.max[c] = std::log1p(raw_max[c]);
    }
  Matrix scaled(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      scaled(r, c) = detail::scale_value(raw(r, c), method, stats.min[c], stats.max[c]);
  return {table.with_normalized(std::move(scaled), std::move(raw_min), std::move(raw_max)),
          std::move(stats)};
}

/// Inference-time scaling with training statistics. No clipping: values
/// beyond the training extrema fall outside [0, 1].
inline std::vector<double> apply_stats(std::span<const double> row, const NormalizationStats& stats) {
  if (row.size() != stats.size()) throw ArityMismatch(stats.size(), row.size());
  std::vector<double> out(row.size());
  for (std::size_t c = 0; c < row.size(); ++c)
    out[c] = detail::scale_value(row[c], stats.method, stats.min[c], stats.max[c]);
  return out;
}

inline Matrix apply_stats(const Matrix& rows, const NormalizationStats& stats) {
  if (rows.cols() != stats.size()) throw ArityMismatch(stats.size(), rows.cols());
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto scaled = apply_stats(rows.row(r), stats);
    std::copy(scaled.begin(), scaled.end(), out.row(r).begin());
  }
  return out;
}

/// Inverse of apply_stats for non-constant columns.
inline std::vector<double> denormalize(std::span<const double> row, const NormalizationStats& stats) {
  if (row.size() != stats.size()) throw ArityMismatch(stats.size(), row.size());
  std::vector<double> out(row.size());
  for (std::size_t c = 0; c < row.size(); ++c) {
    double x = row[c] * (stats.max[c] - stats.min[c]) + stats.min[c];
    if (stats.method == NormMethod::LogMinMax) x = std::expm1(x);
    out[c] = x;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationMatrix {
  std::vector<std::string> labels;
  Matrix r;
};

class TooFewRows : public Error {
 public:
  explicit TooFewRows(std::size_t n)
      : Error("correlation needs at least 2 rows, got " + std::to_string(n)) {}
};

/// Pearson coefficients R_ij = C_ij / sqrt(C_ii C_jj) with population
/// covariance over pairwise-complete rows. Pairs with a constant side are NaN.
inline CorrelationMatrix pearson_matrix(std::vector<std::string> labels,
                                        const std::vector<std::vector<double>>& columns) {
  const std::size_t d = columns.size();
  const std::size_t n = d ? columns[0].size() : 0;
  if (n < 2) throw TooFewRows(n);
  Matrix r(d, d, kNaN);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double si = 0, sj = 0;
      std::size_t m = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double a = columns[i][k], b = columns[j][k];
        if (std::isnan(a) || std::isnan(b)) continue;
        si += a;
        sj += b;
        ++m;
      }
      if (m < 2) continue;
      const double mi = si / static_cast<double>(m), mj = sj / static_cast<double>(m);
      double cij = 0, cii = 0, cjj = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double a = columns[i][k], b = columns[j][k];
        if (std::isnan(a) || std::isnan(b)) continue;
        cij += (a - mi) * (b - mj);
        cii += (a - mi) * (a - mi);
        cjj += (b - mj) * (b - mj);
      }
      if (cii <= 0.0 || cjj <= 0.0) continue;
      const double v = std::clamp(cij / std::sqrt(cii * cjj), -1.0, 1.0);
      r(i, j) = r(j, i) = (i == j) ? 1.0 : v;
    }
  }
  return {std::move(labels), std::move(r)};
}

inline CorrelationMatrix pearson_matrix(const FeatureTable& table) {
  std::vector<std::vector<double>> cols;
  for (std::size_t c = 0; c < table.cols(); ++c) cols.push_back(table.raw().column(c));
  return pearson_matrix(table.column_names(), cols);
}

inline std::string correlation_to_tsv(const CorrelationMatrix& m) {
  std::ostringstream out;
  out << "label";
  for (const auto& l : m.labels) out << '\t' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out << m.labels[i];
    for (std::size_t j = 0; j < m.labels.size(); ++j) out << '\t' << format_double(m.r(i, j));
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Distribution inspection

struct Histogram {
  std::string label;
  double min = kNaN;
  double max = kNaN;
  std::vector<std::size_t> counts;
  /// Fraction of values outside mean +- 4 standard deviations. Reported only;
  /// the values stay in the data.
  double outlier_share = 0.0;
  std::size_t missing = 0;
};

inline Histogram histogram(std::string label, std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw Error("histogram needs at least one bin");
  Histogram h;
  h.label = std::move(label);
  h.counts.assign(bins, 0);
  std::vector<double> finite;
  for (double v : values) {
    if (std::isnan(v)) ++h.missing;
    else finite.push_back(v);
  }
  if (finite.empty()) return h;
  auto [lo, hi] = std::minmax_element(finite.begin(), finite.end());
  h.min = *lo;
  h.max = *hi;
  const double width = (h.max - h.min) / static_cast<double>(bins);
  double sum = 0;
  for (double v : finite) {
    std::size_t b = width > 0 ? static_cast<std::size_t>((v - h.min) / width) : 0;
    h.counts[std::min(b, bins - 1)]++;
    sum += v;
  }
  const double mean = sum / static_cast<double>(finite.size());
  double ss = 0;
  for (double v : finite) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(finite.size()));
  std::size_t outliers = 0;
  for (double v : finite)
    if (std::abs(v - mean) > 4.0 * sd) ++outliers;
  h.outlier_share = static_cast<double>(outliers) / static_cast<double>(finite.size());
  return h;
}

inline std::vector<Histogram> histogram_report(const FeatureTable& table, std::size_t bins) {
  std::vector<Histogram> out;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    auto col = table.raw().column(c);
    out.push_back(histogram(table.column_names()[c], col, bins));
  }
  return out;
}

/// One row per (column, bin) plus a summary row per column with the outlier
/// share.
inline std::string histograms_to_tsv(std::span<const Histogram> hs) {
  std::ostringstream out;
  out << "label\tbin\tlower\tupper\tcount\n";
  for (const auto& h : hs) {
    const double width = (h.max - h.min) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      out << h.label << '\t' << b << '\t' << format_double(h.min + width * b) << '\t'
          << format_double(b + 1 == h.counts.size() ? h.max : h.min + width * (b + 1)) << '\t'
          << h.counts[b] << '\n';
  }
  out << "\nlabel\tmissing\toutlier_share\n";
  for (const auto& h : hs) out << h.label << '\t' << h.missing << '\t' << format_double(h.outlier_share) << '\n';
  return out.str();
}

}  // namespace soilpipe
