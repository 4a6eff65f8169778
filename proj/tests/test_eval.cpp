#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "golden_inputs.hpp"
#include "helpers.hpp"
#include "soilpipe/eval.hpp"

using namespace soilpipe;

namespace {

/// Linear net returning feature 0.
ModelArtifact identity_model(std::size_t d) {
  ModelArtifact a;
  a.family = ModelFamily::Fcnn;
  a.feature_set = "base";
  for (std::size_t j = 0; j < d; ++j) a.feature_names.push_back("f" + std::to_string(j));
  a.stats = {NormMethod::MinMax, std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  DenseLayer l{d, 1, std::vector<double>(d, 0.0), {0.0}};
  l.weights[0] = 1.0;
  a.model = DenseNet{{l}, 0.0};
  return a;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Metrics, RmseHandValue) {
  const std::vector<double> p{1, 2, 3, 4}, t{2, 4, 6, 8};
  EXPECT_NEAR(rmse(p, t), std::sqrt(7.5), 1e-15);
  EXPECT_NEAR(rmse(std::vector<double>{0, 0}, std::vector<double>{5, 5}), 5.0, 0.0);
  EXPECT_NEAR(rmse(std::vector<double>{1, 3}, std::vector<double>{4, 7}), 3.5355339059327378, 1e-15);
}

TEST(Metrics, RmseSymmetricAndShiftInvariant) {
  Rng rng(1);
  std::vector<double> a(50), b(50);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  EXPECT_EQ(rmse(a, b), rmse(b, a));
  auto as = a, bs = b;
  for (auto& v : as) v += 10.0;
  for (auto& v : bs) v += 10.0;
  EXPECT_NEAR(rmse(as, bs), rmse(a, b), 1e-12);
  EXPECT_EQ(rmse(a, a), 0.0);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(rmse(std::vector<double>{1}, std::vector<double>{1, 2}), LengthMismatch);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), EmptyInput);
  EXPECT_THROW(mean_std(std::vector<double>{}), EmptyInput);
}

TEST(Metrics, SampleStd) {
  const auto [m, s] = mean_std(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(m, 5.0);
  EXPECT_DOUBLE_EQ(s, std::sqrt(32.0 / 7.0));
}

TEST(Evaluate, ScoresOnlyTestRows) {
  auto samples = testutil::make_samples(100, 3);
  const auto plan = single_split(samples, 0.8, 4);
  const auto by = plan.by_id();
  Matrix X(100, 2);
  std::vector<PointId> keys;
  for (std::size_t i = 0; i < 100; ++i) {
    keys.push_back(samples[i].point_id);
    const bool test = by.at(samples[i].point_id).role == Role::Test;
    X(i, 0) = test ? samples[i].targets[Nutrient::P] : 1e9;
    X(i, 1) = 0.5;
  }
  auto model = identity_model(2);
  model.plan_hash = plan_hash(plan);
  const FeatureTable table(model.feature_names, keys, X);
  const auto row = evaluate(model, plan, table, samples, Nutrient::P);
  EXPECT_EQ(row.rmse_test, 0.0);
  EXPECT_EQ(row.n_test, 20u);
  EXPECT_EQ(row.n_train, 80u);
  EXPECT_TRUE(std::isnan(row.rmse_average));
  const auto ys = target_vector(samples, Nutrient::P);
  const auto [m, s] = mean_std(ys);
  EXPECT_DOUBLE_EQ(row.target_mean, m);
  EXPECT_DOUBLE_EQ(row.target_std, s);
}

TEST(Evaluate, AppliesModelStatistics) {
  auto samples = testutil::make_samples(40, 5);
  const auto plan = single_split(samples, 0.5, 1);
  Matrix X(40, 1);
  std::vector<PointId> keys;
  for (std::size_t i = 0; i < 40; ++i) {
    keys.push_back(samples[i].point_id);
    X(i, 0) = 10.0 + 2.0 * samples[i].targets[Nutrient::K];
  }
  auto model = identity_model(1);
  model.stats = {NormMethod::MinMax, {10.0}, {12.0}};
  model.plan_hash = plan_hash(plan);
  const FeatureTable table(model.feature_names, keys, X);
  EXPECT_NEAR(evaluate(model, plan, table, samples, Nutrient::K).rmse_test, 0.0, 1e-12);
}

TEST(Evaluate, RefusesForeignPlan) {
  auto samples = testutil::make_samples(30, 6);
  const auto plan = single_split(samples, 0.8, 1);
  auto model = identity_model(1);
  model.plan_hash = plan_hash(single_split(samples, 0.8, 2));
  std::vector<PointId> keys;
  for (const auto& s : samples) keys.push_back(s.point_id);
  const FeatureTable table(model.feature_names, keys, Matrix(30, 1));
  EXPECT_THROW(evaluate(model, plan, table, samples, Nutrient::K), PlanMismatch);
}

TEST(Evaluate, SpatialAverageFromFolds) {
  auto samples = testutil::make_samples(600, 7);
  const auto plan = spatial_grid_split(samples, {4.0, 0.2, 5, 3});
  auto model = identity_model(1);
  model.plan_hash = plan_hash(plan);
  model.fold_rmse = {1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<PointId> keys;
  for (const auto& s : samples) keys.push_back(s.point_id);
  const FeatureTable table(model.feature_names, keys, Matrix(600, 1));
  const auto row = evaluate(model, plan, table, samples, Nutrient::N);
  EXPECT_EQ(row.rmse_average, 3.0);
  EXPECT_EQ(row.n_test, plan.count(Role::Test));
  EXPECT_EQ(row.strategy, SplitStrategy::SpatialGrid);
}

TEST(Permutation, IrrelevantFeatureScoresZero) {
  Rng rng(3);
  const Matrix X = testutil::random_matrix(200, 3, rng, 0.0, 1.0);
  std::vector<double> y(200);
  for (std::size_t i = 0; i < 200; ++i) y[i] = 4.0 * X(i, 0) + X(i, 2);
  BatchPredictor f = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = 4.0 * m(i, 0) + m(i, 2);
    return out;
  };
  const auto imp = permutation_importance(f, X, y, 5, 11);
  ASSERT_EQ(imp.size(), 3u);
  EXPECT_EQ(imp[0].feature, 0u);
  EXPECT_EQ(imp[1].feature, 2u);
  EXPECT_EQ(imp[2].feature, 1u);
  EXPECT_EQ(imp[2].score, 0.0);
  const auto again = permutation_importance(f, X, y, 5, 11, {}, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again[i].score, imp[i].score);
}

TEST(Svg, ColorRamp) {
  EXPECT_EQ(hex_color(correlation_color(1.0)), "#ff0000");
  EXPECT_EQ(hex_color(correlation_color(-1.0)), "#0000ff");
  EXPECT_EQ(hex_color(correlation_color(0.0)), "#ffffff");
  EXPECT_EQ(hex_color(correlation_color(kNaN)), "#c0c0c0");
  EXPECT_EQ(xml_escape("a<b&\"c\">"), "a&lt;b&amp;&quot;c&quot;&gt;");
}

TEST(Reports, PerformanceTableHasFifteenRows) {
  std::vector<EvalRow> rows;
  for (auto f : kAllFamilies)
    for (auto n : kReportNutrientOrder) {
      EvalRow r;
      r.family = f;
      r.nutrient = n;
      r.rmse_test = 1.0;
      r.target_mean = 2.0;
      r.target_std = 0.5;
      rows.push_back(r);
    }
  const auto files = performance_tables(rows);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].name, "perf_base.txt");
  const auto& tsv = files[1].content;
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 16);
  EXPECT_NE(files[0].content.find("2.00 ± 0.50"), std::string::npos);
}

TEST(Reports, ImportanceChartCapsAtTwenty) {
  ImportanceReport imp{ModelFamily::Rf, Nutrient::K, "gain", {}};
  for (std::size_t i = 0; i < 40; ++i) imp.scores.push_back({i, "feat" + std::to_string(i), 40.0 - static_cast<double>(i)});
  const auto files = importance_files(imp);
  ASSERT_EQ(files.size(), 2u);
  const auto& svg = files[0].content;
  std::size_t bars = 0;
  for (auto p = svg.find("<rect class=\"bar\""); p != std::string::npos; p = svg.find("<rect class=\"bar\"", p + 1)) ++bars;
  EXPECT_EQ(bars, 20u);
  EXPECT_EQ(std::count(files[1].content.begin(), files[1].content.end(), '\n'), 21);
  EXPECT_EQ(files[0].name, "importance_rf_K.svg");
}

using testutil::golden_inputs;

TEST(Reports, MatchGoldenFiles) {
  const auto files = render_report_files(golden_inputs());
  const std::string dir = SOILPIPE_GOLDEN_DIR;
  if (std::getenv("SOILPIPE_UPDATE_GOLDEN")) {
    for (const auto& f : files) write_text_file(dir + "/" + f.name, f.content);
    GTEST_SKIP() << "golden files rewritten";
  }
  ASSERT_EQ(files.size(), 16u);
  for (const auto& f : files) EXPECT_EQ(f.content, read_file(dir + "/" + f.name)) << f.name;
}
