#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "soilpipe/core/random.hpp"
#include "soilpipe/ingest.hpp"
#include "soilpipe/tabular.hpp"

namespace testutil {

using namespace soilpipe;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("soilpipe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline Date date(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
}

inline std::vector<SampleRecord> make_samples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SampleRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.point_id = static_cast<PointId>(1000 + i);
    s.lat = rng.uniform(36.0, 68.0);
    s.lon = rng.uniform(-8.0, 28.0);
    s.sample_date = date(2018, 5, 1 + static_cast<unsigned>(i % 28));
    for (auto nut : kAllNutrients) {
      s.targets[nut] = rng.uniform(0.0, 50.0);
      s.below_lod[nut] = false;
    }
  }
  return out;
}

/// Pixel (3x3 per band), weather, 27 yield and 1024 embedding columns with
/// values derived from the row and column index.
inline SourceColumns make_sources(const std::vector<SampleRecord>& samples) {
  SourceColumns src;
  for (auto band : kBandNames)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) src.pixels.names.push_back(neighbor_column(band, r, c));
  src.weather.names.assign(kWeatherColumns.begin(), kWeatherColumns.end());
  for (std::size_t k = 0; k < kYieldCount; ++k) src.yield.names.push_back("yield_c" + std::to_string(k));
  for (std::size_t k = 0; k < kEmbeddingDim; ++k) src.embeddings.names.push_back(embedding_column(k));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto id = samples[i].point_id;
    auto fill = [&](ColumnBlock& b, double base) {
      std::vector<double> v(b.names.size());
      for (std::size_t c = 0; c < v.size(); ++c) v[c] = base + static_cast<double>(i) * 0.5 + static_cast<double>(c);
      b.rows[id] = std::move(v);
    };
    fill(src.pixels, 1000.0);
    fill(src.weather, 10.0);
    fill(src.yield, 2000.0);
    fill(src.embeddings, -1.0);
  }
  return src;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -5.0, double hi = 5.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace testutil
