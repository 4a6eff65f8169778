#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "soilpipe/preprocess.hpp"

using namespace soilpipe;

namespace {

FeatureTable column_table(std::vector<double> values) {
  const std::size_t n = values.size();
  std::vector<PointId> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<PointId>(i + 1);
  return FeatureTable({"x"}, keys, Matrix(n, 1, std::move(values)));
}

/// Textbook Pearson coefficient: population covariance over the product of
/// population standard deviations, written as separate loops.
double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) cxy += (x[k] - mx) * (y[k] - my) / n;
  for (std::size_t k = 0; k < x.size(); ++k) cxx += (x[k] - mx) * (x[k] - mx) / n;
  for (std::size_t k = 0; k < x.size(); ++k) cyy += (y[k] - my) * (y[k] - my) / n;
  return cxy / std::sqrt(cxx * cyy);
}

std::vector<SampleRecord> potassium(std::vector<std::pair<double, bool>> values) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SampleRecord s;
    s.point_id = static_cast<PointId>(i + 1);
    s.targets[Nutrient::K] = values[i].first;
    s.below_lod[Nutrient::K] = values[i].second;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Impute, ConstantMidpointGivesFiveForPotassium) {
  auto out = impute_below_lod(potassium({{5.0, true}, {12.0, false}, {1.0, true}}), Nutrient::K, ConstantMidpoint{});
  EXPECT_EQ(out[0].targets[Nutrient::K], 5.0);
  EXPECT_EQ(out[1].targets[Nutrient::K], 12.0);
  EXPECT_EQ(out[2].targets[Nutrient::K], 5.0);
}

TEST(Impute, UniformRandomIsSeededAndBounded) {
  std::vector<std::pair<double, bool>> v(200, {5.0, true});
  v.push_back({12.0, false});
  const auto a = impute_below_lod(potassium(v), Nutrient::K, UniformRandom{7});
  const auto b = impute_below_lod(potassium(v), Nutrient::K, UniformRandom{7});
  const auto c = impute_below_lod(potassium(v), Nutrient::K, UniformRandom{8});
  bool differs = false;
  for (std::size_t i = 0; i < 200; ++i) {
    const double x = a[i].targets.at(Nutrient::K);
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 10.0);
    EXPECT_EQ(x, b[i].targets.at(Nutrient::K));
    differs |= x != c[i].targets.at(Nutrient::K);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.back().targets.at(Nutrient::K), 12.0);
}

TEST(Impute, NothingFlaggedIsNoOp) {
  const auto in = potassium({{12.0, false}, {30.0, false}});
  const auto out = impute_below_lod(in, Nutrient::K, ConstantMidpoint{});
  EXPECT_EQ(out[0].targets, in[0].targets);
  EXPECT_EQ(out[1].targets, in[1].targets);
}

TEST(Impute, PhHasNoNumericLimit) {
  EXPECT_THROW(impute_below_lod({}, Nutrient::pH_CaCl2, ConstantMidpoint{}), Error);
}

TEST(Normalize, HandComputedColumn) {
  const auto n = normalize(column_table({2, 4, 10}));
  const auto& m = n.table.normalized();
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(1, 0), 0.25);
  EXPECT_EQ(m(2, 0), 1.0);
  EXPECT_EQ(n.table.col_min()[0], 2.0);
  EXPECT_EQ(n.table.col_max()[0], 10.0);
  EXPECT_EQ(n.table.raw()(1, 0), 4.0);
}

TEST(Normalize, ConstantColumnMapsToZero) {
  const auto n = normalize(column_table({3, 3}));
  EXPECT_EQ(n.table.normalized()(0, 0), 0.0);
  EXPECT_EQ(n.table.normalized()(1, 0), 0.0);
}

TEST(Normalize, LogMinMax) {
  const auto n = normalize(column_table({0.0, std::exp(1.0) - 1.0, std::exp(2.0) - 1.0}), NormMethod::LogMinMax);
  EXPECT_NEAR(n.table.normalized()(1, 0), 0.5, 1e-12);
  EXPECT_THROW(normalize(column_table({-1.0, 2.0}), NormMethod::LogMinMax), NegativeUnderLog);
}

TEST(Normalize, NaNStaysNaNAndIsIgnored) {
  const auto n = normalize(column_table({1.0, kNaN, 3.0}));
  EXPECT_TRUE(std::isnan(n.table.normalized()(1, 0)));
  EXPECT_EQ(n.table.normalized()(2, 0), 1.0);
}

TEST(Normalize, RandomTablesHitUnitRangeAndRoundTrip) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 2 + rng.below(30), cols = 1 + rng.below(6);
    Matrix m = testutil::random_matrix(rows, cols, rng, -1e3, 1e3);
    std::vector<PointId> keys(rows);
    std::vector<std::string> names(cols);
    for (std::size_t i = 0; i < rows; ++i) keys[i] = static_cast<PointId>(i);
    for (std::size_t j = 0; j < cols; ++j) names[j] = "c" + std::to_string(j);
    const auto n = normalize(FeatureTable(names, keys, m));
    for (std::size_t j = 0; j < cols; ++j) {
      auto col = n.table.normalized().column(j);
      EXPECT_EQ(*std::min_element(col.begin(), col.end()), 0.0);
      EXPECT_EQ(*std::max_element(col.begin(), col.end()), 1.0);
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const auto back = denormalize(n.table.normalized().row(i), n.stats);
      for (std::size_t j = 0; j < cols; ++j) {
        const double scale = std::max({std::abs(m(i, j)), std::abs(n.stats.min[j]), std::abs(n.stats.max[j])});
        EXPECT_LE(std::abs(back[j] - m(i, j)), 1e-12 * scale);
      }
    }
  }
}

TEST(ApplyStats, EndpointsAndNoClipping) {
  const NormalizationStats s{NormMethod::MinMax, {2.0, -1.0}, {10.0, 1.0}};
  EXPECT_EQ(apply_stats(std::vector<double>{2.0, -1.0}, s), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(apply_stats(std::vector<double>{10.0, 1.0}, s), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(apply_stats(std::vector<double>{18.0, 3.0}, s), (std::vector<double>{2.0, 2.0}));
  EXPECT_THROW(apply_stats(std::vector<double>{1.0}, s), ArityMismatch);
}

TEST(Pearson, HandOracleValue) {
  const auto c = pearson_matrix({"x", "y"}, {{1, 2, 3, 4}, {1, 3, 2, 4}});
  EXPECT_NEAR(c.r(0, 1), 0.8, 1e-15);
  EXPECT_EQ(c.r(0, 0), 1.0);
}

TEST(Pearson, PerfectLinearity) {
  const auto c = pearson_matrix({"x", "2x", "-x"}, {{1, 2, 3, 5}, {2, 4, 6, 10}, {-1, -2, -3, -5}});
  EXPECT_NEAR(c.r(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(c.r(0, 2), -1.0, 1e-15);
}

TEST(Pearson, ConstantColumnIsNA) {
  const auto c = pearson_matrix({"x", "k"}, {{1, 2, 3}, {4, 4, 4}});
  EXPECT_TRUE(std::isnan(c.r(0, 1)));
  EXPECT_TRUE(std::isnan(c.r(1, 1)));
  EXPECT_EQ(c.r(0, 0), 1.0);
}

TEST(Pearson, TooFewRows) { EXPECT_THROW(pearson_matrix({"x"}, {{1.0}}), TooFewRows); }

TEST(Pearson, MatchesBruteForceAndIsAffineInvariant) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<double>> cols(5, std::vector<double>(10));
    for (auto& c : cols)
      for (auto& v : c) v = rng.normal();
    const auto r = pearson_matrix({"a", "b", "c", "d", "e"}, cols);
    auto scaled = cols;
    for (std::size_t j = 0; j < 5; ++j)
      for (auto& v : scaled[j]) v = 3.5 * static_cast<double>(j + 1) * v - 7.0;
    const auto rs = pearson_matrix({"a", "b", "c", "d", "e"}, scaled);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_NEAR(r.r(i, j), brute_pearson(cols[i], cols[j]), 1e-12);
        EXPECT_NEAR(r.r(i, j), r.r(j, i), 0.0);
        EXPECT_NEAR(rs.r(i, j), r.r(i, j), 1e-12);
      }
  }
}

TEST(Histogram, UniformRamp) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i;
  const auto h = histogram("ramp", v, 10);
  EXPECT_EQ(h.counts, std::vector<std::size_t>(10, 10));
}

TEST(Histogram, ConstantColumnOccupiesOneBin) {
  const auto h = histogram("k", std::vector<double>(20, 4.0), 5);
  EXPECT_EQ(std::count_if(h.counts.begin(), h.counts.end(), [](std::size_t c) { return c > 0; }), 1);
  EXPECT_EQ(h.outlier_share, 0.0);
}

TEST(Histogram, NormalOutlierShareBelowOnePermille) {
  Rng rng(2024);
  std::vector<double> v(100000);
  for (auto& x : v) x = rng.normal();
  const auto h = histogram("z", v, 50);
  EXPECT_LT(h.outlier_share, 0.001);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), v.size());
}

TEST(Histogram, ZeroBinsRejected) { EXPECT_THROW(histogram("x", std::vector<double>{1.0}, 0), Error); }
