#include <gtest/gtest.h>

#include <cmath>

#include "soilpipe/synthgen.hpp"

using namespace soilpipe;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double skewness(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0;
  for (double x : v) m += x / n;
  double m2 = 0, m3 = 0;
  for (double x : v) {
    m2 += (x - m) * (x - m) / n;
    m3 += (x - m) * (x - m) * (x - m) / n;
  }
  return m3 / std::pow(m2, 1.5);
}

/// Least-squares residual RMSE of y on [1, X] via normal equations and
/// Gauss-Jordan elimination with partial pivoting.
double ols_residual(const Matrix& X, const std::vector<double>& y) {
  const std::size_t d = X.cols() + 1, n = X.rows();
  std::vector<std::vector<double>> A(d, std::vector<double>(d + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row{1.0};
    for (std::size_t j = 0; j < X.cols(); ++j) row.push_back(X(i, j));
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) A[a][b] += row[a] * row[b];
      A[a][d] += row[a] * y[i];
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(A[r][c]) > std::abs(A[p][c])) p = r;
    std::swap(A[c], A[p]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k <= d; ++k) A[r][k] -= f * A[c][k];
    }
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = A[0][d] / A[0][0];
    for (std::size_t j = 0; j < X.cols(); ++j) p += X(i, j) * A[j + 1][d] / A[j + 1][j + 1];
    ss += (p - y[i]) * (p - y[i]);
  }
  return std::sqrt(ss / static_cast<double>(n));
}

}  // namespace

TEST(Synth, SeededAndDeterministic) {
  SynthConfig cfg;
  cfg.n_samples = 300;
  cfg.seed = 4;
  const auto a = generate(cfg), b = generate(cfg);
  EXPECT_EQ(a.features.raw(), b.features.raw());
  EXPECT_EQ(a.target, b.target);
  cfg.seed = 5;
  EXPECT_NE(generate(cfg).target, a.target);
  EXPECT_EQ(a.samples.front().point_id, 100001);
  EXPECT_EQ(a.features.column_names().front(), "x00");
}

TEST(Synth, PrefixStableInSampleCount) {
  SynthConfig cfg;
  cfg.n_samples = 50;
  const auto small = generate(cfg);
  cfg.n_samples = 100;
  const auto big = generate(cfg);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(small.samples[i].lat, big.samples[i].lat);
    EXPECT_EQ(small.features.raw()(i, 3), big.features.raw()(i, 3));
  }
}

TEST(Synth, FeaturesAreSpatiallyAutocorrelated) {
  SynthConfig cfg;
  cfg.n_samples = 3000;
  cfg.seed = 9;
  const auto d = generate(cfg);
  std::vector<double> near_a, near_b, far_a, far_b;
  const auto& X = d.features.raw();
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    for (std::size_t k = i + 1; k < d.samples.size(); k += 7) {
      const double dist = std::hypot(d.samples[i].lat - d.samples[k].lat, d.samples[i].lon - d.samples[k].lon);
      for (std::size_t j = 0; j < X.cols(); ++j) {
        if (dist < 0.3) {
          near_a.push_back(X(i, j));
          near_b.push_back(X(k, j));
        } else if (dist > 20.0 && far_a.size() < 200000) {
          far_a.push_back(X(i, j));
          far_b.push_back(X(k, j));
        }
      }
    }
  ASSERT_GT(near_a.size(), 100u);
  EXPECT_GT(correlation(near_a, near_b), 0.8);
  EXPECT_LT(std::abs(correlation(far_a, far_b)), 0.3);
}

TEST(Synth, SkewOnlyForNutrientsWithLongTails) {
  SynthConfig cfg;
  cfg.n_samples = 4000;
  cfg.skew = true;
  const auto d = generate(cfg);
  EXPECT_GT(skewness(target_vector(d.samples, Nutrient::K)), 1.0);
  EXPECT_GT(skewness(target_vector(d.samples, Nutrient::P)), 1.0);
  EXPECT_LT(std::abs(skewness(target_vector(d.samples, Nutrient::pH_CaCl2))), 0.5);
  for (double v : target_vector(d.samples, Nutrient::N)) EXPECT_GT(v, 0.0);
}

TEST(Synth, NoiselessLinearTargetIsExactlyLinear) {
  SynthConfig cfg;
  cfg.n_samples = 500;
  cfg.n_features = 6;
  cfg.noise_std = 0.0;
  cfg.nuisance_std = 0.0;
  const auto d = generate(cfg);
  EXPECT_LT(ols_residual(d.features.raw(), d.target), 1e-9);

  cfg.nuisance_std = 1.5;
  const auto n = generate(cfg);
  double m = 0;
  for (double v : n.target) m += v / static_cast<double>(n.target.size());
  double var = 0;
  for (double v : n.target) var += (v - m) * (v - m) / static_cast<double>(n.target.size());
  EXPECT_GT(ols_residual(n.features.raw(), n.target), 0.3 * std::sqrt(var));
}

TEST(Synth, SourcesHaveIngestShapes) {
  SynthConfig cfg;
  cfg.n_samples = 40;
  cfg.n_features = 21;
  const auto d = generate(cfg);
  const auto src = make_sources(cfg, d, {true, true, 5, 0.5});
  EXPECT_EQ(src.pixels.names.size(), 108u);
  EXPECT_EQ(src.yield.size(), kYieldCount);
  EXPECT_EQ(src.embeddings.names.size(), kEmbeddingDim);
  EXPECT_EQ(src.patches.size(), 40u);
  EXPECT_EQ(src.weather.size(), 40u);
  cfg.n_features = 12;
  EXPECT_THROW(make_sources(cfg, generate(cfg)), Error);
}
