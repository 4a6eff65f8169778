#pragma once

#include "soilpipe/eval.hpp"
#include "soilpipe/preprocess.hpp"

namespace testutil {

using namespace soilpipe;

/// Report inputs in the published layout: three models, five nutrients,
/// base and extended feature sets, and a spatial run for GBT.
inline soilpipe::ReportInputs golden_inputs() {
  ReportInputs in;
  const double mean[5] = {5.71, 6.26, 3.15, 26.95, 204.83};
  const double std[5] = {1.40, 1.32, 3.70, 27.02, 208.25};
  for (std::size_t fi = 0; fi < 3; ++fi)
    for (std::size_t ni = 0; ni < 5; ++ni)
      for (const std::string fs : {"base", "surr_wthr_cry"}) {
        EvalRow r;
        r.family = kAllFamilies[fi];
        r.nutrient = kAllNutrients[ni];
        r.feature_set = fs;
        r.target_mean = mean[ni];
        r.target_std = std[ni];
        r.rmse_test = (fs == "base" ? 1.0 : 0.9) * std[ni] * (0.8 + 0.05 * static_cast<double>(fi));
        r.n_train = 1600;
        r.n_test = 400;
        in.rows.push_back(r);
        if (fi == 0 && fs == "base") {
          r.strategy = SplitStrategy::SpatialGrid;
          r.rmse_test *= 1.1;
          r.rmse_average = r.rmse_test * 0.95;
          in.rows.push_back(r);
        }
      }
  ImportanceReport imp{ModelFamily::Gbt, Nutrient::P, "gain", {}};
  for (std::size_t i = 0; i < 25; ++i) imp.scores.push_back({i, "f" + std::to_string(i), 1.0 / static_cast<double>(i + 1)});
  in.importances.push_back(imp);
  in.correlations.push_back({"demo", pearson_matrix({"a", "b", "c"}, {{1, 2, 3, 4}, {1, 3, 2, 4}, {4, 3, 2, 1}})});
  return in;
}

}  // namespace testutil
