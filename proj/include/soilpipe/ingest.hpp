#pragma once

// Readers for every external source: soil tables, SPX1 band patches, weather
// lookups behind a cache, crop-yield grids and precomputed embeddings.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "soilpipe/tabular.hpp"

namespace soilpipe {

// ---------------------------------------------------------------------------
// Soil table

/// Columns: point_id, lat, lon, date, then one column per nutrient. An
/// optional `<nutrient>_below_lod` column (0/1) marks values that were already
/// imputed; without it, readings under the detection limit are flagged and
/// replaced by LOD/2.
inline std::vector<SampleRecord> parse_soil_table(std::istream& in) {
  auto file = parse_delimited(in);
  auto require = [&](std::string_view name) {
    auto idx = file.column(name);
    if (idx == DelimitedFile::npos) throw ParseError(1, "missing column '" + std::string(name) + "'");
    return idx;
  };
  const auto c_id = require("point_id");
  const auto c_lat = require("lat");
  const auto c_lon = require("lon");
  const auto c_date = require("date");
  std::array<std::size_t, 5> c_nut{};
  std::array<std::size_t, 5> c_flag{};
  for (std::size_t i = 0; i < kAllNutrients.size(); ++i) {
    const auto name = nutrient_name(kAllNutrients[i]);
    c_nut[i] = require(name);
    c_flag[i] = file.column(std::string(name) + "_below_lod");
  }

  std::vector<SampleRecord> out;
  out.reserve(file.rows.size());
  for (std::size_t r = 0; r < file.rows.size(); ++r) {
    const auto& row = file.rows[r];
    const auto line = file.line_numbers[r];
    SampleRecord s;
    s.point_id = parse_int(row[c_id], line);
    s.lat = parse_double(row[c_lat], line);
    s.lon = parse_double(row[c_lon], line);
    if (!valid_coordinates(s.lat, s.lon)) throw BoundsError(s.point_id, s.lat, s.lon);
    auto date = try_parse_date(row[c_date]);
    if (!date) throw ParseError(line, "invalid date '" + row[c_date] + "'");
    s.sample_date = *date;
    for (std::size_t i = 0; i < kAllNutrients.size(); ++i) {
      const Nutrient n = kAllNutrients[i];
      const double v = parse_double(row[c_nut[i]], line);
      if (std::isnan(v)) continue;
      const auto& info = nutrient_info(n);
      bool flagged = false;
      if (c_flag[i] != DelimitedFile::npos) {
        flagged = parse_int(row[c_flag[i]], line) != 0;
        s.targets[n] = v;
      } else if (info.lod && v < *info.lod) {
        flagged = true;
        s.targets[n] = *info.lod / 2.0;
      } else {
        s.targets[n] = v;
      }
      s.below_lod[n] = flagged;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SampleRecord> read_soil_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_soil_table(in);
}

/// Writes samples including the below-LOD flag columns, so stored imputed
/// values survive a round trip.
inline void write_soil_table(std::ostream& out, std::span<const SampleRecord> samples,
                             bool with_flags = true) {
  out << "point_id,lat,lon,date";
  for (auto n : kAllNutrients) out << ',' << nutrient_name(n);
  if (with_flags)
    for (auto n : kAllNutrients) out << ',' << nutrient_name(n) << "_below_lod";
  out << '\n';
  for (const auto& s : samples) {
    out << s.point_id << ',' << format_double(s.lat) << ',' << format_double(s.lon) << ','
        << format_date(s.sample_date);
    for (auto n : kAllNutrients) {
      auto it = s.targets.find(n);
      out << ',' << (it == s.targets.end() ? std::string(kNotAValue) : format_double(it->second));
    }
    if (with_flags)
      for (auto n : kAllNutrients) out << ',' << (s.flagged(n) ? 1 : 0);
    out << '\n';
  }
}

inline void save_soil_table(const std::string& path, std::span<const SampleRecord> samples,
                            bool with_flags = true) {
  std::ostringstream ss;
  write_soil_table(ss, samples, with_flags);
  write_text_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// SPX1 band patches
//
// Layout, little-endian:
//   "SPX1" | band name (8 bytes, NUL padded) | u32 width | u32 height |
//   f64 pixel size (m) | f64 center lat | f64 center lon | u16 values[w*h]
// Values are row-major, row 0 first.

struct PatchFile {
  std::string band_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  double pixel_size_m = 10.0;
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  std::vector<std::uint16_t> values;

  std::uint16_t at(std::uint32_t row, std::uint32_t col) const { return values[row * width + col]; }
  std::uint32_t center_row() const { return height / 2; }
  std::uint32_t center_col() const { return width / 2; }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("SPX1: truncated file");
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline std::string encode_patch(const PatchFile& p) {
  if (p.band_id.size() > 8) throw Error("SPX1: band name longer than 8 bytes");
  if (p.values.size() != static_cast<std::size_t>(p.width) * p.height)
    throw Error("SPX1: value count does not match dimensions");
  std::string out = "SPX1";
  std::string name = p.band_id;
  name.resize(8, '\0');
  out += name;
  detail::put_le(out, p.width);
  detail::put_le(out, p.height);
  detail::put_le(out, p.pixel_size_m);
  detail::put_le(out, p.origin_lat);
  detail::put_le(out, p.origin_lon);
  for (auto v : p.values) detail::put_le(out, v);
  return out;
}

inline PatchFile decode_patch(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "SPX1") throw Error("SPX1: bad magic");
  std::size_t pos = 4;
  if (bytes.size() < pos + 8) throw Error("SPX1: truncated file");
  PatchFile p;
  std::string_view name = bytes.substr(pos, 8);
  p.band_id = std::string(name.substr(0, name.find('\0')));
  pos += 8;
  p.width = detail::get_le<std::uint32_t>(bytes, pos);
  p.height = detail::get_le<std::uint32_t>(bytes, pos);
  p.pixel_size_m = detail::get_le<double>(bytes, pos);
  p.origin_lat = detail::get_le<double>(bytes, pos);
  p.origin_lon = detail::get_le<double>(bytes, pos);
  const std::size_t n = static_cast<std::size_t>(p.width) * p.height;
  if (bytes.size() != pos + 2 * n) throw Error("SPX1: payload size does not match dimensions");
  p.values.resize(n);
  for (auto& v : p.values) v = detail::get_le<std::uint16_t>(bytes, pos);
  return p;
}

inline PatchFile read_patch(const std::string& path) { return decode_patch(read_text_file(path)); }

inline void write_patch(const std::string& path, const PatchFile& p) {
  write_text_file(path, encode_patch(p));
}

class MissingBand : public Error {
 public:
  explicit MissingBand(std::string band)
      : Error("missing band " + band), band_(std::move(band)) {}
  const std::string& band() const { return band_; }

 private:
  std::string band_;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Pixel values of one sample. Without neighbors: one center value per band
/// named like "B02". With neighbors: the 3x3 window per band, band-major then
/// row-major, named like "B02_r0c0".
struct PixelColumns {
  std::vector<std::string> names;
  std::vector<double> values;
};

inline PixelColumns extract_pixels(std::span<const PatchFile> patches, bool neighbors) {
  std::vector<const PatchFile*> by_band;
  for (auto band : kBandNames) {
    auto it = std::find_if(patches.begin(), patches.end(),
                           [&](const PatchFile& p) { return p.band_id == band; });
    if (it == patches.end()) throw MissingBand(std::string(band));
    by_band.push_back(&*it);
  }
  const auto& first = *by_band.front();
  for (const auto* p : by_band) {
    if (p->width != first.width || p->height != first.height)
      throw DimensionMismatch("band " + p->band_id + " is " + std::to_string(p->width) + "x" +
                              std::to_string(p->height) + ", expected " +
                              std::to_string(first.width) + "x" + std::to_string(first.height));
    if (p->origin_lat != first.origin_lat || p->origin_lon != first.origin_lon)
      throw DimensionMismatch("band " + p->band_id + " has a different origin");
  }
  if (first.width % 2 == 0 || first.height % 2 == 0)
    throw DimensionMismatch("patch dimensions must be odd to have a center pixel");
  if (neighbors && (first.width < 3 || first.height < 3))
    throw DimensionMismatch("neighbor extraction needs at least a 3x3 patch");

  PixelColumns out;
  for (std::size_t b = 0; b < kBandNames.size(); ++b) {
    const auto& p = *by_band[b];
    const auto cr = p.center_row();
    const auto cc = p.center_col();
    if (!neighbors) {
      out.names.emplace_back(kBandNames[b]);
      out.values.push_back(p.at(cr, cc));
      continue;
    }
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        out.names.push_back(neighbor_column(kBandNames[b], dr + 1, dc + 1));
        out.values.push_back(p.at(cr + dr, cc + dc));
      }
  }
  return out;
}

/// Reads `<dir>/<point_id>/<band>.spx` for every sample that has a patch
/// directory and returns the extracted pixel block.
inline ColumnBlock read_patch_directory(const std::string& dir, std::span<const SampleRecord> samples,
                                        bool neighbors) {
  namespace fs = std::filesystem;
  ColumnBlock block;
  for (const auto& s : samples) {
    fs::path sample_dir = fs::path(dir) / std::to_string(s.point_id);
    if (!fs::is_directory(sample_dir)) continue;
    std::vector<PatchFile> patches;
    for (auto band : kBandNames) {
      fs::path f = sample_dir / (std::string(band) + ".spx");
      if (!fs::exists(f)) throw MissingBand(std::string(band));
      patches.push_back(read_patch(f.string()));
    }
    auto cols = extract_pixels(patches, neighbors);
    if (block.names.empty()) block.names = cols.names;
    block.rows[s.point_id] = std::move(cols.values);
  }
  return block;
}

// ---------------------------------------------------------------------------
// Generic column block files (point_id + named columns)

inline ColumnBlock read_column_block(const std::string& path) {
  auto table = read_feature_table(path);
  ColumnBlock block;
  block.names = table.column_names();
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto row = table.raw().row(r);
    block.rows[table.row_keys()[r]] = std::vector<double>(row.begin(), row.end());
  }
  return block;
}

inline void write_column_block(std::ostream& out, const ColumnBlock& block) {
  std::vector<PointId> keys;
  for (const auto& [k, _] : block.rows) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  Matrix m(keys.size(), block.names.size());
  for (std::size_t r = 0; r < keys.size(); ++r) {
    const auto& v = block.rows.at(keys[r]);
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
  write_matrix_csv(out, block.names, keys, m);
}

inline void save_column_block(const std::string& path, const ColumnBlock& block) {
  std::ostringstream ss;
  write_column_block(ss, block);
  write_text_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Weather

struct WeatherKey {
  double lat = 0.0;
  double lon = 0.0;
  Date date{};

  auto tie() const { return std::make_tuple(lat, lon, static_cast<int>(date.year()),
                                            static_cast<unsigned>(date.month()),
                                            static_cast<unsigned>(date.day())); }
  friend bool operator<(const WeatherKey& a, const WeatherKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const WeatherKey& a, const WeatherKey& b) { return a.tie() == b.tie(); }

  std::string to_string() const {
    return "(" + format_double(lat) + ", " + format_double(lon) + ", " + format_date(date) + ")";
  }
};

/// Nine weather features observed on the satellite acquisition date.
struct WeatherObservation {
  PointId point_id = 0;
  Date obs_date{};
  double temp = 0.0;
  double feels_like = 0.0;
  double dew_point = 0.0;
  double humidity = 0.0;
  double pressure = 0.0;
  double wind_speed = 0.0;
  double clouds = 0.0;
  double sunrise_s = 0.0;
  double sunset_s = 0.0;

  std::array<double, kWeatherCount> features() const {
    return {temp, feels_like, dew_point, humidity, pressure, wind_speed, clouds, sunrise_s, sunset_s};
  }
  static WeatherObservation from_features(std::span<const double> f) {
    WeatherObservation w;
    w.temp = f[0];
    w.feels_like = f[1];
    w.dew_point = f[2];
    w.humidity = f[3];
    w.pressure = f[4];
    w.wind_speed = f[5];
    w.clouds = f[6];
    w.sunrise_s = f[7];
    w.sunset_s = f[8];
    return w;
  }
};

/// Source of observations for keys missing from the cache.
class WeatherFetcher {
 public:
  virtual ~WeatherFetcher() = default;
  /// Returns nullopt when the source has no observation for the key.
  virtual std::optional<WeatherObservation> fetch(const WeatherKey& key) = 0;
};

class FetchError : public Error {
 public:
  FetchError(const WeatherKey& key, const std::string& reason)
      : Error("weather fetch failed for " + key.to_string() + ": " + reason), key_(key) {}
  const WeatherKey& key() const { return key_; }

 private:
  WeatherKey key_;
};

namespace detail {

inline std::string weather_header() {
  std::string h = "lat,lon,date";
  for (auto c : kWeatherColumns) h += "," + std::string(c);
  return h;
}

inline std::string weather_row(const WeatherKey& key, const WeatherObservation& obs) {
  std::string line = format_double(key.lat) + "," + format_double(key.lon) + "," + format_date(key.date);
  for (double v : obs.features()) line += "," + format_double(v);
  return line;
}

inline std::map<WeatherKey, WeatherObservation> parse_weather_rows(const DelimitedFile& file) {
  std::map<WeatherKey, WeatherObservation> out;
  const auto c_lat = file.column("lat");
  const auto c_lon = file.column("lon");
  const auto c_date = file.column("date");
  if (c_lat == DelimitedFile::npos || c_lon == DelimitedFile::npos || c_date == DelimitedFile::npos)
    throw ParseError(1, "weather table needs lat, lon, date columns");
  std::array<std::size_t, kWeatherCount> cols{};
  for (std::size_t i = 0; i < kWeatherCount; ++i) {
    cols[i] = file.column(kWeatherColumns[i]);
    if (cols[i] == DelimitedFile::npos)
      throw ParseError(1, "weather table missing column " + std::string(kWeatherColumns[i]));
  }
  for (std::size_t r = 0; r < file.rows.size(); ++r) {
    const auto& row = file.rows[r];
    const auto line = file.line_numbers[r];
    WeatherKey key;
    key.lat = parse_double(row[c_lat], line);
    key.lon = parse_double(row[c_lon], line);
    auto date = try_parse_date(row[c_date]);
    if (!date) throw ParseError(line, "invalid date");
    key.date = *date;
    std::array<double, kWeatherCount> f{};
    for (std::size_t i = 0; i < kWeatherCount; ++i) f[i] = parse_double(row[cols[i]], line);
    auto obs = WeatherObservation::from_features(f);
    obs.obs_date = key.date;
    out[key] = obs;
  }
  return out;
}

}  // namespace detail

/// Fetcher backed by a delimited fixture file (lat, lon, date + nine
/// features). Counts invocations so cache behavior is observable.
class FixtureWeatherFetcher : public WeatherFetcher {
 public:
  explicit FixtureWeatherFetcher(const std::string& path)
      : table_(detail::parse_weather_rows(read_delimited(path))) {}
  explicit FixtureWeatherFetcher(std::map<WeatherKey, WeatherObservation> table)
      : table_(std::move(table)) {}

  std::optional<WeatherObservation> fetch(const WeatherKey& key) override {
    ++calls_;
    auto it = table_.find(key);
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t calls() const { return calls_; }

 private:
  std::map<WeatherKey, WeatherObservation> table_;
  std::size_t calls_ = 0;
};

/// Append-only delimited cache keyed by (lat, lon, date). Writes are
/// serialized; an empty path keeps the cache in memory only.
class WeatherCache {
 public:
  WeatherCache() = default;
  explicit WeatherCache(std::string path) : path_(std::move(path)) {
    if (!path_.empty() && std::filesystem::exists(path_))
      entries_ = detail::parse_weather_rows(read_delimited(path_));
  }

  std::optional<WeatherObservation> lookup(const WeatherKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void append(const WeatherKey& key, const WeatherObservation& obs) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(key, obs).second) return;
    if (path_.empty()) return;
    const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to weather cache " + path_);
    if (fresh) out << detail::weather_header() << '\n';
    out << detail::weather_row(key, obs) << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::string path_;
  std::map<WeatherKey, WeatherObservation> entries_;
  mutable std::mutex mutex_;
};

struct WeatherRequest {
  PointId point_id = 0;
  WeatherKey key;
};

/// One request per sample, keyed on the sample location and the acquisition
/// date (the sample date unless an acquisition date is supplied).
inline std::vector<WeatherRequest> weather_requests(
    std::span<const SampleRecord> samples, const std::map<PointId, Date>& acquisition_dates = {}) {
  std::vector<WeatherRequest> out;
  for (const auto& s : samples) {
    auto it = acquisition_dates.find(s.point_id);
    out.push_back({s.point_id, {s.lat, s.lon, it == acquisition_dates.end() ? s.sample_date : it->second}});
  }
  return out;
}

struct WeatherResult {
  std::vector<WeatherObservation> observations;
  std::vector<PointId> unresolved;
  std::size_t fetched = 0;

  ColumnBlock to_block() const {
    ColumnBlock block;
    block.names.assign(kWeatherColumns.begin(), kWeatherColumns.end());
    for (const auto& o : observations) {
      auto f = o.features();
      block.rows[o.point_id] = std::vector<double>(f.begin(), f.end());
    }
    return block;
  }
};

/// Resolves weather for each request: cache first, then at most one fetch per
/// distinct missing key. Fetched observations are appended to the cache.
inline WeatherResult fetch_weather(std::span<const WeatherRequest> requests, WeatherFetcher& fetcher,
                                   WeatherCache& cache) {
  WeatherResult result;
  std::map<WeatherKey, std::optional<WeatherObservation>> fetched;
  for (const auto& req : requests) {
    std::optional<WeatherObservation> obs = cache.lookup(req.key);
    if (!obs) {
      auto it = fetched.find(req.key);
      if (it == fetched.end()) {
        std::optional<WeatherObservation> got;
        try {
          got = fetcher.fetch(req.key);
        } catch (const FetchError&) {
          throw;
        } catch (const std::exception& e) {
          throw FetchError(req.key, e.what());
        }
        ++result.fetched;
        if (got) {
          got->obs_date = req.key.date;
          cache.append(req.key, *got);
        }
        it = fetched.emplace(req.key, got).first;
      }
      obs = it->second;
    }
    if (!obs) {
      result.unresolved.push_back(req.point_id);
      continue;
    }
    obs->point_id = req.point_id;
    obs->obs_date = req.key.date;
    result.observations.push_back(*obs);
  }
  return result;
}

inline void write_weather_fixture(std::ostream& out,
                                  const std::map<WeatherKey, WeatherObservation>& table) {
  out << detail::weather_header() << '\n';
  for (const auto& [k, v] : table) out << detail::weather_row(k, v) << '\n';
}

// ---------------------------------------------------------------------------
// Crop yield grids
//
// Text format:
//   crop_code <code>
//   bounds <lat_min> <lat_max> <lon_min> <lon_max>
//   cell_size <degrees>
//   nodata <value>
//   <rows of whitespace-separated values, northernmost row first>

struct YieldRaster {
  std::string crop_code;
  double lat_min = 0.0, lat_max = 0.0, lon_min = 0.0, lon_max = 0.0;
  double cell_size_deg = 1.0;
  double nodata = -9999.0;
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * n_cols + col]; }
};

class OutOfBounds : public Error {
 public:
  OutOfBounds(std::string crop, double lat, double lon)
      : Error("point (" + format_double(lat) + ", " + format_double(lon) +
              ") outside yield raster " + crop),
        crop_(std::move(crop)) {}
  const std::string& crop_code() const { return crop_; }

 private:
  std::string crop_;
};

inline YieldRaster parse_yield_raster(std::istream& in) {
  YieldRaster r;
  std::string line;
  std::size_t line_no = 0;
  int header_seen = 0;
  while (header_seen < 4 && std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "crop_code") ls >> r.crop_code;
    else if (key == "bounds") ls >> r.lat_min >> r.lat_max >> r.lon_min >> r.lon_max;
    else if (key == "cell_size") ls >> r.cell_size_deg;
    else if (key == "nodata") ls >> r.nodata;
    else throw ParseError(line_no, "unexpected header key '" + key + "'");
    if (ls.fail()) throw ParseError(line_no, "malformed header line");
    ++header_seen;
  }
  if (header_seen < 4) throw ParseError(line_no, "incomplete yield raster header");
  if (r.cell_size_deg <= 0 || r.lat_max <= r.lat_min || r.lon_max <= r.lon_min)
    throw ParseError(line_no, "degenerate yield raster geometry");
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_fields(trim(line), ' ');
    std::vector<double> row;
    for (auto f : fields)
      if (!f.empty()) row.push_back(parse_double(f, line_no));
    if (row.empty()) continue;
    if (r.n_cols == 0) r.n_cols = row.size();
    if (row.size() != r.n_cols) throw ParseError(line_no, "ragged yield raster row");
    r.values.insert(r.values.end(), row.begin(), row.end());
    ++r.n_rows;
  }
  if (r.n_rows == 0) throw ParseError(line_no, "yield raster has no data rows");
  return r;
}

inline YieldRaster read_yield_raster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_yield_raster(in);
}

inline std::string encode_yield_raster(const YieldRaster& r) {
  std::ostringstream out;
  out << "crop_code " << r.crop_code << '\n'
      << "bounds " << format_double(r.lat_min) << ' ' << format_double(r.lat_max) << ' '
      << format_double(r.lon_min) << ' ' << format_double(r.lon_max) << '\n'
      << "cell_size " << format_double(r.cell_size_deg) << '\n'
      << "nodata " << format_double(r.nodata) << '\n';
  for (std::size_t i = 0; i < r.n_rows; ++i) {
    for (std::size_t j = 0; j < r.n_cols; ++j) out << (j ? " " : "") << format_double(r.at(i, j));
    out << '\n';
  }
  return out.str();
}

/// Nearest-cell value (the cell containing the point); nodata becomes NaN.
/// Points on the southern or eastern edge belong to the last row/column.
inline double sample_yield_cell(const YieldRaster& r, double lat, double lon) {
  if (!(lat >= r.lat_min && lat <= r.lat_max && lon >= r.lon_min && lon <= r.lon_max))
    throw OutOfBounds(r.crop_code, lat, lon);
  auto row = static_cast<std::size_t>(std::floor((r.lat_max - lat) / r.cell_size_deg));
  auto col = static_cast<std::size_t>(std::floor((lon - r.lon_min) / r.cell_size_deg));
  row = std::min(row, r.n_rows - 1);
  col = std::min(col, r.n_cols - 1);
  const double v = r.at(row, col);
  return v == r.nodata ? kNaN : v;
}

inline std::string yield_column(std::string_view crop) { return "yield_" + std::string(crop); }

struct YieldColumns {
  std::vector<std::string> names;
  std::vector<double> values;
};

inline YieldColumns sample_yield(std::span<const YieldRaster> rasters, double lat, double lon) {
  YieldColumns out;
  for (const auto& r : rasters) {
    out.names.push_back(yield_column(r.crop_code));
    out.values.push_back(sample_yield_cell(r, lat, lon));
  }
  return out;
}

inline ColumnBlock yield_block(std::span<const YieldRaster> rasters,
                               std::span<const SampleRecord> samples) {
  ColumnBlock block;
  for (const auto& r : rasters) block.names.push_back(yield_column(r.crop_code));
  for (const auto& s : samples) block.rows[s.point_id] = sample_yield(rasters, s.lat, s.lon).values;
  return block;
}

/// All `*.grid` files in a directory, sorted by file name.
inline std::vector<YieldRaster> read_yield_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".grid") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<YieldRaster> out;
  for (const auto& f : files) out.push_back(read_yield_raster(f));
  return out;
}

// ---------------------------------------------------------------------------
// Embeddings

class WrongArity : public Error {
 public:
  WrongArity(PointId id, std::size_t count)
      : Error("point " + std::to_string(id) + ": embedding has " + std::to_string(count) +
              " values, expected " + std::to_string(kEmbeddingDim)),
        point_id_(id),
        count_(count) {}
  PointId point_id() const { return point_id_; }
  std::size_t count() const { return count_; }

 private:
  PointId point_id_;
  std::size_t count_;
};

/// Rows of point_id followed by 1024 values; an optional header line starting
/// with "point_id" is skipped. Columns are named embedding_0000..1023.
inline ColumnBlock parse_embeddings(std::istream& in) {
  ColumnBlock block;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) block.names.push_back(embedding_column(i));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    if (view.starts_with("point_id")) continue;
    auto fields = split_fields(view, ',');
    const PointId id = parse_int(fields[0], line_no);
    if (fields.size() - 1 != kEmbeddingDim) throw WrongArity(id, fields.size() - 1);
    std::vector<double> values;
    values.reserve(kEmbeddingDim);
    for (std::size_t i = 1; i < fields.size(); ++i) values.push_back(parse_double(fields[i], line_no));
    if (!block.rows.emplace(id, std::move(values)).second) throw DuplicateKey(id);
  }
  return block;
}

inline ColumnBlock read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_embeddings(in);
}

}  // namespace soilpipe
