#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "soilpipe/hpo.hpp"

using namespace soilpipe;

namespace {

StudyData regression(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  StudyData d{testutil::random_matrix(n, 4, rng, 0.0, 1.0), std::vector<double>(n), {}};
  for (std::size_t i = 0; i < n; ++i) d.y[i] = 3.0 * d.X(i, 0) - 2.0 * d.X(i, 1) * d.X(i, 2) + 0.1 * rng.normal();
  d.rounds = holdout_rounds(n, 0.8, seed + 1);
  return d;
}

TrainingBudget small_budget() {
  TrainingBudget b;
  b.gbt_rounds = 30;
  b.gbt_patience = 5;
  b.fcnn_epochs = 5;
  b.fcnn_patience = 3;
  return b;
}

}  // namespace

TEST(Sampling, DrawsStayInBounds) {
  for (auto f : kAllFamilies) {
    const auto& space = space_for(f);
    for (std::size_t t = 0; t < 10000; ++t) ASSERT_TRUE(space.contains(sample(space, 5, t))) << space.name << " " << t;
  }
}

TEST(Sampling, LogUniformLearningRate) {
  const auto& space = gbt_space();
  const double geo_mid = std::sqrt(0.01 * 0.3);
  int below = 0;
  for (std::size_t t = 0; t < 10000; ++t) below += std::get<double>(sample(space, 9, t).at("learning_rate")) < geo_mid;
  EXPECT_NEAR(below / 10000.0, 0.5, 0.02);
}

TEST(Sampling, StepGridAndChoices) {
  const auto& space = fcnn_space();
  std::set<std::int64_t> widths, batches;
  std::set<std::string> optimizers;
  for (std::size_t t = 0; t < 2000; ++t) {
    const auto p = sample(space, 1, t);
    widths.insert(std::get<std::int64_t>(p.at("neurons_l0")));
    batches.insert(std::get<std::int64_t>(p.at("batch_size")));
    optimizers.insert(std::get<std::string>(p.at("optimizer")));
  }
  EXPECT_EQ(widths.size(), 31u);
  EXPECT_EQ(*widths.begin(), 8);
  EXPECT_EQ(*widths.rbegin(), 128);
  EXPECT_EQ(batches, (std::set<std::int64_t>{16, 32, 64}));
  EXPECT_EQ(optimizers, (std::set<std::string>{"Adam", "SGD"}));
}

TEST(Sampling, Deterministic) {
  for (auto f : kAllFamilies) {
    EXPECT_EQ(sample(space_for(f), 3, 7), sample(space_for(f), 3, 7));
    EXPECT_NE(sample(space_for(f), 3, 7), sample(space_for(f), 4, 7));
  }
}

TEST(Sampling, EmptySpace) {
  EXPECT_THROW(SearchSpace({"none", {}}).validate(), EmptySpace);
  EXPECT_THROW(sample(SearchSpace{"bad", {{"x", IntRange{5, 1}}}}, 0, 0), EmptySpace);
  EXPECT_THROW(sample(SearchSpace{"bad", {{"x", Choice{}}}}, 0, 0), EmptySpace);
  EXPECT_THROW(sample(SearchSpace{"bad", {{"x", RealRange{0.0, 1.0, true}}}}, 0, 0), EmptySpace);
}

TEST(Params, JsonRoundTrip) {
  const auto p = sample(fcnn_space(), 2, 0);
  EXPECT_EQ(params_from_json(params_to_json(p)), p);
}

TEST(Params, FcnnUsesLeadingLayers) {
  auto p = sample(fcnn_space(), 2, 0);
  p["hidden_layers"] = std::int64_t{2};
  p["neurons_l0"] = std::int64_t{12};
  p["neurons_l1"] = std::int64_t{20};
  const auto c = net_config(p, TrainingBudget{}, 0);
  EXPECT_EQ(c.hidden, (std::vector<int>{12, 20}));
}

TEST(Study, SingleTrial) {
  const auto data = regression(120, 1);
  StudyOptions opts;
  opts.n_trials = 1;
  opts.budget = small_budget();
  const auto r = run_study(ModelFamily::Gbt, "P", data, gbt_space(), opts);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best, 0u);
  ASSERT_TRUE(r.artifact.has_value());
  auto artifact = *r.artifact;
  artifact.feature_names = {"a", "b", "c", "d"};
  EXPECT_EQ(predict(artifact, data.X).size(), 120u);
}

TEST(Study, BestIsNoWorseThanMedian) {
  const auto data = regression(200, 2);
  StudyOptions opts;
  opts.n_trials = 9;
  opts.refit = false;
  opts.budget = small_budget();
  for (auto f : kAllFamilies) {
    if (f == ModelFamily::Rf) continue;
    const auto r = run_study(f, "N", data, space_for(f), opts);
    std::vector<double> v;
    for (const auto& t : r.trials)
      if (t.status == TrialStatus::Ok) v.push_back(t.val_rmse);
    ASSERT_FALSE(v.empty());
    std::sort(v.begin(), v.end());
    EXPECT_EQ(r.best_trial().val_rmse, v.front());
    EXPECT_LE(r.best_trial().val_rmse, v[v.size() / 2]);
  }
}

TEST(Study, WorkerCountDoesNotChangeRecords) {
  const auto data = regression(150, 3);
  StudyOptions opts;
  opts.n_trials = 4;
  opts.seed = 17;
  opts.budget = small_budget();
  const auto a = run_study(ModelFamily::Fcnn, "K", data, fcnn_space(), opts);
  opts.workers = 3;
  const auto b = run_study(ModelFamily::Fcnn, "K", data, fcnn_space(), opts);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].config, b.trials[i].config);
    EXPECT_EQ(a.trials[i].round_rmse, b.trials[i].round_rmse);
  }
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.artifact->model, b.artifact->model);
}

TEST(Study, FoldRoundsAverage) {
  auto data = regression(100, 4);
  std::vector<int> fold(100);
  for (std::size_t i = 0; i < 100; ++i) fold[i] = static_cast<int>(i % 4);
  data.rounds = fold_index_rounds(fold, 4);
  StudyOptions opts;
  opts.n_trials = 2;
  opts.budget = small_budget();
  const auto r = run_study(ModelFamily::Gbt, "P", data, gbt_space(), opts);
  for (const auto& t : r.trials) {
    ASSERT_EQ(t.round_rmse.size(), 4u);
    const double mean = (t.round_rmse[0] + t.round_rmse[1] + t.round_rmse[2] + t.round_rmse[3]) / 4.0;
    EXPECT_DOUBLE_EQ(t.val_rmse, mean);
  }
  EXPECT_EQ(r.artifact->fold_rmse, r.best_trial().round_rmse);
}

TEST(Study, HoldoutSizes) {
  const auto r = holdout_rounds(10, 0.8, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].train.size(), 8u);
  EXPECT_EQ(r[0].validation.size(), 2u);
}

TEST(Study, TrialLogHasOneRowPerTrial) {
  const auto data = regression(80, 5);
  StudyOptions opts;
  opts.n_trials = 3;
  opts.refit = false;
  opts.budget = small_budget();
  const auto r = run_study(ModelFamily::Gbt, "P", data, gbt_space(), opts);
  const auto log = trial_log(gbt_space(), r.trials);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  EXPECT_EQ(log.rfind("trial,status,val_rmse,max_depth,learning_rate", 0), 0u);
}

TEST(BestTables, FifteenCellsGiveThreeTables) {
  std::vector<StudyCell> cells;
  for (auto f : kAllFamilies)
    for (auto n : kReportNutrientOrder) {
      StudyCell c{f, n, {}};
      for (std::size_t t = 0; t < 3; ++t) {
        TrialRecord r;
        r.id = t;
        r.config = sample(space_for(f), static_cast<std::uint64_t>(n), t);
        r.val_rmse = 1.0 + static_cast<double>((t + 1) % 3);
        c.trials.push_back(r);
      }
      cells.push_back(c);
    }
  const auto tables = report_best(cells);
  ASSERT_EQ(tables.size(), 3u);
  for (const auto& t : tables) {
    EXPECT_EQ(t.columns, std::vector<Nutrient>(kReportNutrientOrder.begin(), kReportNutrientOrder.end()));
    for (const auto& row : t.cells) EXPECT_EQ(row.size(), 5u);
  }
  const auto& gbt = tables[0];
  const auto best = cells[0].trials[2].config;
  EXPECT_EQ(gbt.cells[0][0], std::to_string(std::get<std::int64_t>(best.at("max_depth"))));
  EXPECT_EQ(gbt.cells[1][0], format_fixed(std::get<double>(best.at("learning_rate")), 4));
  const auto text = format_best_table(gbt);
  EXPECT_EQ(text.rfind("GBT: Selected Hyperparameter\n", 0), 0u);
  EXPECT_NE(text.find("pH_CaCl2"), std::string::npos);
  EXPECT_EQ(best_table_tsv(gbt).rfind("hyperparameter\t", 0), 0u);
}

TEST(BestTables, FailedCellIsReported) {
  StudyCell c{ModelFamily::Rf, Nutrient::K, {}};
  TrialRecord r;
  r.status = TrialStatus::Error;
  c.trials.push_back(r);
  std::vector<StudyCell> cells{c};
  EXPECT_THROW(report_best(cells), MissingCell);
  EXPECT_THROW(report_best(std::vector<StudyCell>{}), MissingCell);
}
