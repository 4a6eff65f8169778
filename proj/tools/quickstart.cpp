// Library walkthrough on synthetic data: generate, normalize, split, fit a
// boosted ensemble, and score it on the held-out rows.

#include <iostream>

#include "soilpipe/eval.hpp"
#include "soilpipe/preprocess.hpp"
#include "soilpipe/split.hpp"
#include "soilpipe/synthgen.hpp"
#include "soilpipe/trees.hpp"

using namespace soilpipe;

int main() {
  SynthConfig cfg;
  cfg.n_samples = 1500;
  cfg.seed = 42;
  const auto data = generate(cfg);
  const auto norm = normalize(data.features);

  const auto plan = single_split(data.samples, 0.8, 7);
  std::vector<std::size_t> train, test;
  const auto roles = plan.by_id();
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    (roles.at(data.samples[i].point_id).role == Role::Test ? test : train).push_back(i);

  const Matrix& X = norm.table.normalized();
  auto pick = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> y;
    for (auto r : rows) y.push_back(data.target[r]);
    return y;
  };
  const auto X_train = X.select_rows(train), X_test = X.select_rows(test);
  const auto y_train = pick(train), y_test = pick(test);

  GBTConfig gbt;
  gbt.max_depth = 4;
  gbt.n_rounds = 150;
  gbt.early_stopping_patience = 0;
  const auto fit = fit_gbt(X_train, y_train, gbt);

  std::vector<double> pred;
  for (std::size_t i = 0; i < X_test.rows(); ++i) pred.push_back(fit.model.predict(X_test.row(i)));
  const auto [mean, sd] = mean_std(y_test);
  std::cout << "train " << train.size() << " / test " << test.size() << '\n';
  std::cout << "target mean " << format_fixed(mean, 2) << " +- " << format_fixed(sd, 2) << '\n';
  std::cout << "test RMSE " << format_fixed(rmse(pred, y_test), 3) << '\n';
  for (const auto& s : gain_importance(fit.model, data.features.column_names(), 5))
    std::cout << "  " << s.name << "  " << format_fixed(s.score, 3) << '\n';
}
