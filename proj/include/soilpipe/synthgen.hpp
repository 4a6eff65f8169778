#pragma once

// Synthetic, spatially autocorrelated soil datasets. Smooth random fields
// are sums of seeded plane waves; features sample those fields at the
// points, so they double as a location fingerprint, and each target adds a
// smooth spatial nuisance that only location can explain.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "soilpipe/core/random.hpp"
#include "soilpipe/ingest.hpp"
#include "soilpipe/tabular.hpp"

namespace soilpipe {

/// Unit-variance field: sum of K cosines with random direction, wavelength in
/// [L, 3L] and phase, each with amplitude sqrt(2/K).
class SmoothField {
 public:
  SmoothField(std::uint64_t seed, double correlation_length_deg, int waves = 16) {
    Rng rng(seed);
    const double amp = std::sqrt(2.0 / waves);
    for (int k = 0; k < waves; ++k) {
      const double lambda = correlation_length_deg * rng.uniform(1.0, 3.0);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double kmag = 2.0 * std::numbers::pi / lambda;
      waves_.push_back({kmag * std::cos(theta), kmag * std::sin(theta), rng.uniform(0.0, 2.0 * std::numbers::pi), amp});
    }
  }

  double operator()(double lat, double lon) const {
    double s = 0.0;
    for (const auto& w : waves_) s += w.amp * std::cos(w.k_lat * lat + w.k_lon * lon + w.phase);
    return s;
  }

 private:
  struct Wave {
    double k_lat, k_lon, phase, amp;
  };
  std::vector<Wave> waves_;
};

enum class TargetRule { Linear, Nonlinear };

inline std::string_view target_rule_name(TargetRule r) { return r == TargetRule::Linear ? "linear" : "nonlinear"; }

inline TargetRule parse_target_rule(std::string_view s) {
  if (s == "linear") return TargetRule::Linear;
  if (s == "nonlinear") return TargetRule::Nonlinear;
  throw Error("unknown target rule '" + std::string(s) + "'");
}

struct SynthConfig {
  std::size_t n_samples = 2000;
  double lat_min = 36.0;
  double lat_max = 68.0;
  double lon_min = -8.0;
  double lon_max = 28.0;
  double correlation_length_deg = 3.0;
  std::size_t n_features = 12;
  TargetRule target_rule = TargetRule::Linear;
  /// White noise on the standardized target.
  double noise_std = 0.1;
  /// Amplitude of the smooth spatial nuisance on the standardized target.
  double nuisance_std = 1.5;
  /// White noise added to every feature value.
  double feature_noise_std = 0.05;
  /// Exponential transform for N, P and K giving positive right-tailed values.
  bool skew = false;
  Nutrient target_nutrient = Nutrient::pH_CaCl2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 1) throw Error("n_samples must be >= 1");
    if (!(correlation_length_deg > 0.0)) throw Error("correlation_length_deg must be positive");
    if (!(lat_max > lat_min && lon_max > lon_min)) throw Error("empty extent");
    if (!valid_coordinates(lat_min, lon_min) || !valid_coordinates(lat_max, lon_max))
      throw Error("extent outside valid coordinates");
    if (n_features < 1) throw Error("n_features must be >= 1");
    if (noise_std < 0.0 || nuisance_std < 0.0 || feature_noise_std < 0.0)
      throw Error("noise levels must be non-negative");
  }
};

struct SynthDataset {
  /// Raw readings for all five nutrients; detection limits are applied at
  /// ingest, not here.
  std::vector<SampleRecord> samples;
  FeatureTable features;
  /// Values of cfg.target_nutrient, in sample order.
  std::vector<double> target;
};

namespace detail {

/// Seed streams of one synthetic world.
enum SynthStream : std::uint64_t {
  kLocations = 1,
  kFeatureFields = 1000,
  kNuisanceFields = 2000,
  kRuleWeights = 3000,
  kSampleNoise = 4000,
  kSourceFields = 5000,
  kSourceNoise = 6000,
};

struct NutrientScale {
  double mean;
  double sd;
};

/// Location and spread of each nutrient's values.
inline NutrientScale nutrient_scale(Nutrient n) {
  switch (n) {
    case Nutrient::pH_CaCl2: return {5.7, 1.0};
    case Nutrient::pH_H2O: return {6.3, 0.95};
    case Nutrient::N: return {3.2, 3.7};
    case Nutrient::P: return {27.0, 27.0};
    case Nutrient::K: return {205.0, 208.0};
  }
  return {0.0, 1.0};
}

inline double rule_value(TargetRule rule, std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  if (rule == TargetRule::Linear) {
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
    return s;
  }
  for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * std::tanh(1.5 * x[j]);
  if (x.size() >= 2) s += 0.5 * x[0] * x[1];
  return s;
}

}  // namespace detail

inline std::string synth_feature_name(std::size_t j) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "x%02zu", j);
  return buf;
}

/// Draws the dataset. Points are uniform over the extent with sample dates in
/// the 2018 growing season; feature j is smooth field j plus white noise; the
/// standardized target of each nutrient is rule(features) (scaled to unit
/// variance) + nuisance_std * its own smooth field + noise_std * N(0, 1).
/// Every random draw of sample i comes from a generator seeded by (seed, i).
inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_samples, d = cfg.n_features;
  std::vector<SmoothField> fields;
  for (std::size_t j = 0; j < d; ++j)
    fields.emplace_back(derive_seed(cfg.seed, detail::kFeatureFields + j), cfg.correlation_length_deg);

  SynthDataset out;
  out.samples.resize(n);
  Matrix X(n, d);
  std::vector<PointId> keys(n);
  std::vector<std::array<double, 5>> noise(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(derive_seed(cfg.seed, detail::kLocations), i));
    auto& s = out.samples[i];
    s.point_id = static_cast<PointId>(100001 + i);
    s.lat = rng.uniform(cfg.lat_min, cfg.lat_max);
    s.lon = rng.uniform(cfg.lon_min, cfg.lon_max);
    const auto day = std::chrono::sys_days{std::chrono::year{2018} / std::chrono::March / 1} +
                     std::chrono::days{rng.integer(0, 213)};
    s.sample_date = Date{day};
    keys[i] = s.point_id;
    for (std::size_t j = 0; j < d; ++j) X(i, j) = fields[j](s.lat, s.lon) + cfg.feature_noise_std * rng.normal();
    for (auto& e : noise[i]) e = rng.normal();
  }

  for (std::size_t k = 0; k < kAllNutrients.size(); ++k) {
    const Nutrient nut = kAllNutrients[k];
    Rng wrng(derive_seed(cfg.seed, detail::kRuleWeights + k));
    std::vector<double> w(d);
    for (auto& v : w) v = wrng.normal();
    std::vector<double> signal(n);
    for (std::size_t i = 0; i < n; ++i) signal[i] = detail::rule_value(cfg.target_rule, w, X.row(i));
    double mean = 0.0, ss = 0.0;
    for (double v : signal) mean += v;
    mean /= static_cast<double>(n);
    for (double v : signal) ss += (v - mean) * (v - mean);
    const double sd = n > 1 && ss > 0.0 ? std::sqrt(ss / static_cast<double>(n)) : 1.0;

    const SmoothField nuisance(derive_seed(cfg.seed, detail::kNuisanceFields + k), cfg.correlation_length_deg);
    const auto scale = detail::nutrient_scale(nut);
    const bool skewed = cfg.skew && (nut == Nutrient::N || nut == Nutrient::P || nut == Nutrient::K);
    const double spread = std::sqrt(1.0 + cfg.nuisance_std * cfg.nuisance_std + cfg.noise_std * cfg.noise_std);
    constexpr double sigma_ln = 0.9;
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = out.samples[i];
      const double z = (signal[i] - mean) / sd + cfg.nuisance_std * nuisance(s.lat, s.lon) +
                       cfg.noise_std * noise[i][k];
      double v;
      if (skewed) {
        const double median = scale.mean * std::exp(-sigma_ln * sigma_ln / 2.0);
        v = median * std::exp(sigma_ln * z / spread);
      } else {
        v = scale.mean + scale.sd * z / spread;
      }
      s.targets[nut] = v;
      s.below_lod[nut] = false;
    }
  }

  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back(synth_feature_name(j));
  out.features = FeatureTable(std::move(names), std::move(keys), std::move(X));
  out.target = target_vector(out.samples, cfg.target_nutrient);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline inputs in the ingest formats

inline constexpr std::array<std::string_view, kYieldCount> kSynthCrops = {
    "alfalfa", "barley",  "bean",     "buckwheat", "cabbage", "carrot",    "chickpea", "cotton",    "flax",
    "grape",   "maize",   "millet",   "oat",       "olive",   "onion",     "pea",      "potato",    "rapeseed",
    "rice",    "rye",     "sorghum",  "soybean",   "sugarbeet", "sunflower", "tomato",  "triticale", "wheat"};

struct SynthSourceOptions {
  bool embeddings = false;
  bool patches = false;
  /// Side length of the square band patches (odd, >= 3).
  std::uint32_t patch_size = 5;
  double yield_cell_deg = 0.5;
};

struct SynthSources {
  std::vector<SampleRecord> samples;
  ColumnBlock pixels;  ///< 3x3 neighbourhood columns for all 12 bands
  std::map<WeatherKey, WeatherObservation> weather;
  std::vector<YieldRaster> yield;
  ColumnBlock embeddings;
  /// Per sample, one patch per band (only with options.patches).
  std::map<PointId, std::vector<PatchFile>> patches;
};

namespace detail {

/// Offset and scale mapping a unit-variance field onto a plausible range for
/// each weather column.
inline constexpr std::array<std::pair<double, double>, kWeatherCount> kWeatherScale = {{
    {285.0, 6.0},     // temp (K)
    {284.0, 7.0},     // feels_like
    {279.0, 5.0},     // dew_point
    {70.0, 12.0},     // humidity (%)
    {1015.0, 6.0},    // pressure (hPa)
    {3.5, 1.5},       // wind_speed (m/s)
    {45.0, 25.0},     // clouds (%)
    {21600.0, 2400.0},  // sunrise (s after midnight)
    {72000.0, 2400.0},  // sunset
}};

inline std::uint16_t to_dn(double v) {
  return static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
}

}  // namespace detail

/// Expresses a dataset in the external source formats: the first 12 features
/// become band reflectances (digital numbers), the next 9 weather values,
/// further fields become crop-yield rasters and, optionally, embeddings.
/// Requires cfg.n_features >= 21.
inline SynthSources make_sources(const SynthConfig& cfg, const SynthDataset& data,
                                 const SynthSourceOptions& opts = {}) {
  constexpr std::size_t kBandCount = kBandNames.size();
  if (cfg.n_features < kBandCount + kWeatherCount)
    throw Error("source synthesis needs at least " + std::to_string(kBandCount + kWeatherCount) + " features");
  if (opts.patches && (opts.patch_size < 3 || opts.patch_size % 2 == 0))
    throw Error("patch_size must be odd and >= 3");

  SynthSources src;
  src.samples = data.samples;
  const Matrix& X = data.features.raw();

  for (auto band : kBandNames)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) src.pixels.names.push_back(neighbor_column(band, r, c));

  for (std::size_t i = 0; i < src.samples.size(); ++i) {
    const auto& s = src.samples[i];
    Rng rng(derive_seed(derive_seed(cfg.seed, detail::kSourceNoise), i));
    std::vector<double> px;
    std::vector<PatchFile> patches;
    for (std::size_t b = 0; b < kBandCount; ++b) {
      const double center = 1000.0 + 400.0 * X(i, b);
      const std::uint32_t side = opts.patches ? opts.patch_size : 3;
      PatchFile p;
      p.band_id = std::string(kBandNames[b]);
      p.width = p.height = side;
      p.pixel_size_m = 10.0;
      p.origin_lat = s.lat;
      p.origin_lon = s.lon;
      p.values.resize(static_cast<std::size_t>(side) * side);
      for (auto& v : p.values) v = detail::to_dn(center + 8.0 * rng.normal());
      p.values[p.center_row() * side + p.center_col()] = detail::to_dn(center);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) px.push_back(p.at(p.center_row() + dr, p.center_col() + dc));
      if (opts.patches) patches.push_back(std::move(p));
    }
    src.pixels.rows[s.point_id] = std::move(px);
    if (opts.patches) src.patches[s.point_id] = std::move(patches);

    std::array<double, kWeatherCount> w{};
    for (std::size_t k = 0; k < kWeatherCount; ++k)
      w[k] = detail::kWeatherScale[k].first + detail::kWeatherScale[k].second * X(i, kBandCount + k);
    auto obs = WeatherObservation::from_features(w);
    obs.point_id = s.point_id;
    obs.obs_date = s.sample_date;
    src.weather[WeatherKey{s.lat, s.lon, s.sample_date}] = obs;
  }

  const double lat0 = std::floor(cfg.lat_min), lat1 = std::ceil(cfg.lat_max);
  const double lon0 = std::floor(cfg.lon_min), lon1 = std::ceil(cfg.lon_max);
  for (std::size_t c = 0; c < kYieldCount; ++c) {
    const SmoothField field(derive_seed(cfg.seed, detail::kSourceFields + c), cfg.correlation_length_deg);
    YieldRaster r;
    r.crop_code = std::string(kSynthCrops[c]);
    r.lat_min = lat0;
    r.lat_max = lat1;
    r.lon_min = lon0;
    r.lon_max = lon1;
    r.cell_size_deg = opts.yield_cell_deg;
    r.n_rows = static_cast<std::size_t>(std::ceil((lat1 - lat0) / opts.yield_cell_deg));
    r.n_cols = static_cast<std::size_t>(std::ceil((lon1 - lon0) / opts.yield_cell_deg));
    for (std::size_t row = 0; row < r.n_rows; ++row)
      for (std::size_t col = 0; col < r.n_cols; ++col) {
        const double lat = lat1 - (static_cast<double>(row) + 0.5) * opts.yield_cell_deg;
        const double lon = lon0 + (static_cast<double>(col) + 0.5) * opts.yield_cell_deg;
        r.values.push_back(std::round(2000.0 + 700.0 * field(lat, lon)));
      }
    src.yield.push_back(std::move(r));
  }

  if (opts.embeddings) {
    constexpr std::size_t kLatent = 8;
    std::vector<SmoothField> latent;
    for (std::size_t k = 0; k < kLatent; ++k)
      latent.emplace_back(derive_seed(cfg.seed, detail::kSourceFields + 100 + k), cfg.correlation_length_deg);
    Rng arng(derive_seed(cfg.seed, detail::kSourceFields + 200));
    std::vector<double> A(kEmbeddingDim * kLatent);
    for (auto& a : A) a = arng.normal() / std::sqrt(static_cast<double>(kLatent));
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) src.embeddings.names.push_back(embedding_column(i));
    for (std::size_t i = 0; i < src.samples.size(); ++i) {
      const auto& s = src.samples[i];
      Rng rng(derive_seed(derive_seed(cfg.seed, detail::kSourceNoise + 1), i));
      std::array<double, kLatent> z{};
      for (std::size_t k = 0; k < kLatent; ++k) z[k] = latent[k](s.lat, s.lon);
      std::vector<double> e(kEmbeddingDim);
      for (std::size_t m = 0; m < kEmbeddingDim; ++m) {
        double v = 0.1 * rng.normal();
        for (std::size_t k = 0; k < kLatent; ++k) v += A[m * kLatent + k] * z[k];
        e[m] = std::round(v * 1e4) / 1e4;
      }
      src.embeddings.rows[s.point_id] = std::move(e);
    }
  }
  return src;
}

}  // namespace soilpipe
