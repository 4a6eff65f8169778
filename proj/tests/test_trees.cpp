#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "soilpipe/model.hpp"
#include "soilpipe/trees.hpp"

using namespace soilpipe;

namespace {

struct Data {
  Matrix X;
  std::vector<double> y;
};

Data linear_data(std::size_t n, std::size_t d, std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed);
  Data out{testutil::random_matrix(n, d, rng, 0.0, 1.0), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(j + 1) * out.X(i, j);
    out.y[i] = s + noise * rng.normal();
  }
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::vector<double> predict_all(const TreeEnsemble& m, const Matrix& X) {
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) out[i] = m.predict(X.row(i));
  return out;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

TEST(Gbt, ZeroRoundsPredictsMean) {
  auto d = linear_data(50, 3, 1);
  GBTConfig cfg;
  cfg.n_rounds = 0;
  const auto fit = fit_gbt(d.X, d.y, cfg);
  for (double p : predict_all(fit.model, d.X)) EXPECT_DOUBLE_EQ(p, mean(d.y));
}

TEST(Gbt, HugeGammaBlocksAllSplits) {
  auto d = linear_data(80, 3, 2);
  GBTConfig cfg;
  cfg.gamma = 1e9;
  cfg.n_rounds = 20;
  const auto fit = fit_gbt(d.X, d.y, cfg);
  for (const auto& t : fit.model.trees) EXPECT_EQ(t.nodes().size(), 1u);
  for (double p : predict_all(fit.model, d.X)) EXPECT_NEAR(p, mean(d.y), 1e-9);
}

TEST(Gbt, PerfectStump) {
  Matrix X(6, 1, std::vector<double>{0, 0, 0, 1, 1, 1});
  std::vector<double> y{-2, -2, -2, 3, 3, 3};
  GBTConfig cfg;
  cfg.max_depth = 1;
  cfg.n_rounds = 1;
  cfg.learning_rate = 1.0;
  cfg.reg_lambda = 0.0;
  const auto fit = fit_gbt(X, y, cfg);
  EXPECT_NEAR(rmse(predict_all(fit.model, X), y), 0.0, 1e-12);
  const auto& root = fit.model.trees[0].nodes()[0];
  EXPECT_EQ(root.feature, 0);
  EXPECT_GT(root.threshold, 0.0);
  EXPECT_LE(root.threshold, 1.0);
}

TEST(Gbt, LeafValuesAreMeanResiduals) {
  auto d = linear_data(40, 2, 3);
  GBTConfig cfg;
  cfg.max_depth = 2;
  cfg.n_rounds = 1;
  cfg.learning_rate = 1.0;
  cfg.reg_lambda = 0.0;
  const auto fit = fit_gbt(d.X, d.y, cfg);
  const auto& tree = fit.model.trees[0];
  const double base = mean(d.y);
  std::map<double, std::pair<double, int>> by_leaf;
  for (std::size_t i = 0; i < d.X.rows(); ++i) {
    const double v = tree.predict(d.X.row(i));
    by_leaf[v].first += d.y[i] - base;
    by_leaf[v].second += 1;
  }
  EXPECT_GE(by_leaf.size(), 2u);
  for (const auto& [value, acc] : by_leaf) EXPECT_NEAR(value, acc.first / acc.second, 1e-10);
}

TEST(Gbt, TrainingLossNeverIncreases) {
  auto d = linear_data(300, 4, 4, 0.3);
  for (double lambda : {0.0, 1.0, 10.0}) {
    GBTConfig cfg;
    cfg.n_rounds = 60;
    cfg.max_depth = 3;
    cfg.learning_rate = 0.3;
    cfg.reg_lambda = lambda;
    const auto fit = fit_gbt(d.X, d.y, cfg);
    for (std::size_t r = 1; r < fit.train_rmse.size(); ++r)
      EXPECT_LE(fit.train_rmse[r], fit.train_rmse[r - 1] + 1e-12);
  }
}

TEST(Gbt, EarlyStoppingTruncatesToBestRound) {
  auto d = linear_data(200, 3, 5, 1.0);
  auto v = linear_data(100, 3, 6, 1.0);
  GBTConfig cfg;
  cfg.n_rounds = 300;
  cfg.learning_rate = 0.2;
  cfg.max_depth = 4;
  cfg.early_stopping_patience = 10;
  const auto fit = fit_gbt(d.X, d.y, cfg, ValidationSet{&v.X, v.y});
  ASSERT_GT(fit.best_rounds, 0);
  EXPECT_EQ(fit.model.trees.size(), static_cast<std::size_t>(fit.best_rounds));
  const auto best = std::min_element(fit.val_rmse.begin(), fit.val_rmse.end());
  EXPECT_EQ(best - fit.val_rmse.begin() + 1, fit.best_rounds);
  EXPECT_NEAR(rmse(predict_all(fit.model, v.X), v.y), *best, 1e-9);
}

TEST(Gbt, SeededSubsamplingIsDeterministic) {
  auto d = linear_data(200, 5, 7, 0.1);
  GBTConfig cfg;
  cfg.n_rounds = 20;
  cfg.subsample = 0.7;
  cfg.colsample_bytree = 0.6;
  cfg.seed = 99;
  EXPECT_EQ(fit_gbt(d.X, d.y, cfg).model, fit_gbt(d.X, d.y, cfg).model);
  auto other = cfg;
  other.seed = 100;
  EXPECT_NE(fit_gbt(d.X, d.y, cfg).model, fit_gbt(d.X, d.y, other).model);
}

TEST(Gbt, RejectsNonFinite) {
  auto d = linear_data(10, 2, 8);
  d.X(3, 1) = kNaN;
  EXPECT_THROW(fit_gbt(d.X, d.y, GBTConfig{}), NonFiniteInput);
  auto e = linear_data(10, 2, 8);
  e.y[0] = INFINITY;
  EXPECT_THROW(fit_rf(e.X, e.y, RFConfig{}), NonFiniteInput);
}

TEST(Splitter, MatchesExhaustiveSearch) {
  Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 3 + rng.below(25), d = 1 + rng.below(4);
    Matrix X(n, d);
    for (auto& v : X.data()) v = static_cast<double>(rng.below(8));
    std::vector<double> g(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = rng.normal();
      h[i] = rng.uniform(0.5, 2.0);
    }
    const SplitParams p{rng.uniform(0.0, 2.0), 0.0, 0.0};
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    const auto got = find_best_split(BinnedMatrix::build(X, 256), g, h, rows, feats, p);

    auto score = [&](double G, double H) { return G * G / (H + p.lambda); };
    double best = 0.0;
    for (std::size_t f = 0; f < d; ++f)
      for (double cut = 0.5; cut < 8.0; cut += 1.0) {
        double GL = 0, HL = 0, GR = 0, HR = 0;
        std::size_t nl = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (X(i, f) < cut) {
            GL += g[i];
            HL += h[i];
            ++nl;
          } else {
            GR += g[i];
            HR += h[i];
          }
        }
        if (nl == 0 || nl == n) continue;
        best = std::max(best, 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)));
      }
    if (best <= 1e-12) {
      EXPECT_FALSE(got.valid() && got.gain > 1e-9);
      continue;
    }
    ASSERT_TRUE(got.valid());
    EXPECT_NEAR(got.gain, best, 1e-9 * std::max(1.0, best));
  }
}

TEST(Splitter, GainFormulaWithAlpha) {
  const SplitParams p{1.0, 0.5, 0.0};
  EXPECT_DOUBLE_EQ(soft_threshold(2.0, 0.5), 1.5);
  EXPECT_DOUBLE_EQ(soft_threshold(-2.0, 0.5), -1.5);
  EXPECT_DOUBLE_EQ(soft_threshold(0.3, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(leaf_weight(2.0, 3.0, p), -1.5 / 4.0);
  const double expected = 0.5 * (1.5 * 1.5 / 3.0 + 2.5 * 2.5 / 4.0 - 4.5 * 4.5 / 6.0);
  EXPECT_DOUBLE_EQ(split_gain(2.0, 2.0, 3.0, 3.0, p), expected);
}

TEST(Binning, ExactCutsForFewDistinctValues) {
  Matrix X(5, 1, std::vector<double>{3, 1, 2, 1, 3});
  const auto b = BinnedMatrix::build(X, 256);
  EXPECT_EQ(b.cuts(0), (std::vector<double>{1.5, 2.5}));
  EXPECT_EQ(b.code(0, 0), 2u);
  EXPECT_EQ(b.code(1, 0), 0u);
}

TEST(Binning, QuantileBinsAreBounded) {
  Rng rng(3);
  Matrix X = testutil::random_matrix(5000, 2, rng, 0.0, 1.0);
  const auto b = BinnedMatrix::build(X, 16);
  for (std::size_t f = 0; f < 2; ++f) {
    EXPECT_LE(b.bin_count(f), 16u);
    std::vector<std::size_t> counts(b.bin_count(f));
    for (auto c : b.feature_codes(f)) ++counts[c];
    for (auto c : counts) EXPECT_NEAR(static_cast<double>(c), 5000.0 / 16.0, 60.0);
  }
}

TEST(Forest, MemorizesDistinctRows) {
  auto d = linear_data(60, 3, 11);
  RFConfig cfg;
  cfg.n_estimators = 5;
  cfg.bootstrap = false;
  const auto m = fit_rf(d.X, d.y, cfg);
  EXPECT_NEAR(rmse(predict_all(m, d.X), d.y), 0.0, 1e-12);
}

TEST(Forest, ConstantTarget) {
  auto d = linear_data(30, 2, 12);
  std::fill(d.y.begin(), d.y.end(), 4.25);
  for (double p : predict_all(fit_rf(d.X, d.y, RFConfig{}), d.X)) EXPECT_EQ(p, 4.25);
  for (double p : predict_all(fit_gbt(d.X, d.y, GBTConfig{}).model, d.X)) EXPECT_EQ(p, 4.25);
}

TEST(Forest, PredictionsStayInTargetRange) {
  auto d = linear_data(200, 4, 13, 0.5);
  RFConfig cfg;
  cfg.n_estimators = 30;
  cfg.max_features = 0.5;
  cfg.min_samples_leaf = 3;
  const auto m = fit_rf(d.X, d.y, cfg);
  const auto [lo, hi] = std::minmax_element(d.y.begin(), d.y.end());
  Rng rng(1);
  const Matrix probe = testutil::random_matrix(500, 4, rng, -2.0, 3.0);
  for (double p : predict_all(m, probe)) {
    EXPECT_GE(p, *lo);
    EXPECT_LE(p, *hi);
  }
}

TEST(Forest, DepthAndLeafLimits) {
  auto d = linear_data(300, 3, 14, 0.5);
  RFConfig cfg;
  cfg.n_estimators = 10;
  cfg.max_depth = 3;
  cfg.min_samples_leaf = 20;
  const auto m = fit_rf(d.X, d.y, cfg);
  for (const auto& t : m.trees) {
    EXPECT_LE(t.depth(), 3);
    EXPECT_LE(t.leaf_count(), 8u);
  }
}

TEST(Forest, DeterministicAcrossWorkers) {
  auto d = linear_data(200, 4, 15, 0.5);
  RFConfig cfg;
  cfg.n_estimators = 16;
  cfg.max_features = 0.5;
  cfg.seed = 5;
  const auto a = fit_rf(d.X, d.y, cfg, 1);
  EXPECT_EQ(a, fit_rf(d.X, d.y, cfg, 1));
  EXPECT_EQ(a, fit_rf(d.X, d.y, cfg, 4));
}

TEST(Importance, StumpGain) {
  Matrix X(4, 2, std::vector<double>{0, 5, 0, 6, 1, 5, 1, 6});
  std::vector<double> y{0, 0, 2, 2};
  GBTConfig cfg;
  cfg.max_depth = 1;
  cfg.n_rounds = 1;
  cfg.reg_lambda = 0.0;
  const auto fit = fit_gbt(X, y, cfg);
  const std::vector<std::string> names{"a", "b"};
  const auto imp = gain_importance(fit.model, names);
  ASSERT_EQ(imp.size(), 1u);
  EXPECT_EQ(imp[0].name, "a");
  // G_L = -2, G_R = 2, H = 2 each: 0.5 * (4/2 + 4/2 - 0) = 2.
  EXPECT_DOUBLE_EQ(imp[0].score, 2.0);
}

TEST(Importance, AveragesOverSplits) {
  TreeEnsemble e;
  TreeNode s0{0, 0.5, 1, 2, 4.0, 0.0}, s1{0, 0.5, 1, 2, 2.0, 0.0}, s2{1, 0.5, 1, 2, 1.0, 0.0}, leaf;
  e.trees.emplace_back(std::vector<TreeNode>{s0, leaf, leaf});
  e.trees.emplace_back(std::vector<TreeNode>{s1, leaf, leaf});
  e.trees.emplace_back(std::vector<TreeNode>{s2, leaf, leaf});
  const auto imp = gain_importance(e);
  ASSERT_EQ(imp.size(), 2u);
  EXPECT_EQ(imp[0].feature, 0u);
  EXPECT_DOUBLE_EQ(imp[0].score, 3.0);
  EXPECT_DOUBLE_EQ(imp[1].score, 1.0);
  EXPECT_EQ(gain_importance(e, {}, 1).size(), 1u);
}

TEST(Importance, DominantFeatureRanksFirst) {
  Rng rng(21);
  Matrix X = testutil::random_matrix(500, 4, rng, 0.0, 1.0);
  std::vector<double> y(500);
  for (std::size_t i = 0; i < 500; ++i) y[i] = 10.0 * X(i, 0) + 0.1 * X(i, 2);
  GBTConfig cfg;
  cfg.n_rounds = 50;
  cfg.max_depth = 3;
  EXPECT_EQ(gain_importance(fit_gbt(X, y, cfg).model)[0].feature, 0u);
  RFConfig rf;
  rf.n_estimators = 20;
  EXPECT_EQ(gain_importance(fit_rf(X, y, rf))[0].feature, 0u);
}

TEST(Importance, ArtifactArityChecked) {
  auto d = linear_data(50, 3, 22);
  ModelArtifact a;
  a.feature_names = {"a", "b", "c"};
  a.model = fit_gbt(d.X, d.y, GBTConfig{}).model;
  EXPECT_EQ(predict(a, d.X).size(), 50u);
  EXPECT_THROW(predict(a, Matrix(2, 4)), ArityMismatch);
  EXPECT_EQ(gain_importance(a, 2).size(), 2u);
}
