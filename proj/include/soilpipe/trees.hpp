#pragma once

// Regression trees, random forests (bagging with variance-reduction splits),
// and histogram gradient boosting with squared-error loss and L1/L2/gamma
// regularization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soilpipe/core/errors.hpp"
#include "soilpipe/core/matrix.hpp"
#include "soilpipe/core/parallel.hpp"
#include "soilpipe/core/random.hpp"

namespace soilpipe {

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

class EmptyTraining : public Error {
 public:
  explicit EmptyTraining(std::size_t n)
      : Error("training needs at least 2 rows, got " + std::to_string(n)) {}
};

// ---------------------------------------------------------------------------
// Tree structure

/// Split nodes route `row[feature] < threshold` to the left child.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double gain = 0.0;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict(std::span<const double> row) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = row[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)].value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }
  int depth() const { return depth_from(0); }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;

 private:
  int depth_from(int i) const {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

enum class EnsembleKind { Boosted, Forest };

/// Boosted: base_score + sum of trees. Forest: mean of trees.
struct TreeEnsemble {
  EnsembleKind kind = EnsembleKind::Boosted;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;

  double predict(std::span<const double> row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    if (kind == EnsembleKind::Forest) return trees.empty() ? base_score : s / static_cast<double>(trees.size());
    return base_score + s;
  }

  friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;
};

namespace detail {

inline void check_training_data(const Matrix& X, std::span<const double> y) {
  if (X.rows() != y.size()) throw ArityMismatch(X.rows(), y.size());
  if (X.rows() < 2) throw EmptyTraining(X.rows());
  for (double v : X.data())
    if (!std::isfinite(v)) throw NonFiniteInput("feature matrix contains a non-finite value");
  for (double v : y)
    if (!std::isfinite(v)) throw NonFiniteInput("target contains a non-finite value");
}

/// Threshold strictly between two distinct neighbours lo < hi such that
/// lo < t <= hi.
inline double split_point(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid > lo ? mid : hi;
}

inline double rmse_of(std::span<const double> pred, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Histogram binning

/// Candidate cut points per feature. A value's bin is the number of cuts
/// <= value, so splitting after bin j is the same as `x < cuts[j]`.
///
/// With at most `max_bins` distinct values the cuts sit between every pair of
/// neighbouring values, which makes the histogram search identical to an
/// exhaustive one. Otherwise cuts come from equal-frequency quantiles.
class BinnedMatrix {
 public:
  static BinnedMatrix build(const Matrix& X, std::size_t max_bins) {
    if (max_bins < 2) throw Error("histogram needs at least 2 bins");
    BinnedMatrix b;
    b.rows_ = X.rows();
    b.cols_ = X.cols();
    b.cuts_.resize(X.cols());
    b.codes_.resize(X.rows() * X.cols());
    std::vector<double> sorted(X.rows());
    for (std::size_t f = 0; f < X.cols(); ++f) {
      for (std::size_t r = 0; r < X.rows(); ++r) sorted[r] = X(r, f);
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> uniq;
      std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(uniq));
      auto& cuts = b.cuts_[f];
      if (uniq.size() <= max_bins) {
        for (std::size_t i = 1; i < uniq.size(); ++i) cuts.push_back(detail::split_point(uniq[i - 1], uniq[i]));
      } else {
        const std::size_t n = sorted.size();
        for (std::size_t k = 1; k < max_bins; ++k) {
          const double q = sorted[k * n / max_bins];
          auto it = std::lower_bound(uniq.begin(), uniq.end(), q);
          if (it == uniq.begin()) continue;
          const double cut = detail::split_point(*(it - 1), *it);
          if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
        }
      }
      for (std::size_t r = 0; r < X.rows(); ++r) {
        const double v = X(r, f);
        b.codes_[f * b.rows_ + r] =
            static_cast<std::uint32_t>(std::upper_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
      }
    }
    return b;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::uint32_t code(std::size_t row, std::size_t feature) const { return codes_[feature * rows_ + row]; }
  std::span<const std::uint32_t> feature_codes(std::size_t f) const {
    return {codes_.data() + f * rows_, rows_};
  }
  const std::vector<double>& cuts(std::size_t feature) const { return cuts_[feature]; }
  std::size_t bin_count(std::size_t feature) const { return cuts_[feature].size() + 1; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::uint32_t> codes_;  // feature-major
};

// ---------------------------------------------------------------------------
// Second-order split scoring

struct SplitParams {
  double lambda = 1.0;  ///< L2 on leaf weights
  double alpha = 0.0;   ///< L1, soft-threshold on the gradient sum
  double gamma = 0.0;   ///< minimum loss reduction
};

inline double soft_threshold(double g, double alpha) {
  if (g > alpha) return g - alpha;
  if (g < -alpha) return g + alpha;
  return 0.0;
}

inline double leaf_score(double G, double H, const SplitParams& p) {
  const double t = soft_threshold(G, p.alpha);
  return t * t / (H + p.lambda);
}

/// Optimal leaf weight -T(G)/(H + lambda), before shrinkage.
inline double leaf_weight(double G, double H, const SplitParams& p) {
  return -soft_threshold(G, p.alpha) / (H + p.lambda);
}

/// 1/2 [S(G_L,H_L) + S(G_R,H_R) - S(G,H)], the loss reduction before gamma.
inline double split_gain(double GL, double HL, double GR, double HR, const SplitParams& p) {
  return 0.5 * (leaf_score(GL, HL, p) + leaf_score(GR, HR, p) - leaf_score(GL + GR, HL + HR, p));
}

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  std::uint32_t bin = 0;  ///< rows with code <= bin go left
  double gain = 0.0;      ///< loss reduction before gamma

  bool valid() const { return feature >= 0; }
};

/// Best histogram split of `rows` over `features`. A split is accepted only
/// if both children are non-empty and gain - gamma > 0. Ties keep the first
/// candidate in (feature order, threshold order).
inline SplitCandidate find_best_split(const BinnedMatrix& bins, std::span<const double> grad,
                                      std::span<const double> hess, std::span<const std::size_t> rows,
                                      std::span<const int> features, const SplitParams& params) {
  SplitCandidate best;
  double best_objective = 0.0;
  double G = 0.0, H = 0.0;
  for (auto r : rows) {
    G += grad[r];
    H += hess[r];
  }
  std::vector<double> hg, hh;
  std::vector<std::size_t> hc;
  for (int f : features) {
    const auto fu = static_cast<std::size_t>(f);
    const std::size_t nb = bins.bin_count(fu);
    if (nb < 2) continue;
    hg.assign(nb, 0.0);
    hh.assign(nb, 0.0);
    hc.assign(nb, 0);
    auto codes = bins.feature_codes(fu);
    for (auto r : rows) {
      const auto c = codes[r];
      hg[c] += grad[r];
      hh[c] += hess[r];
      hc[c] += 1;
    }
    double GL = 0.0, HL = 0.0;
    std::size_t nl = 0;
    for (std::size_t j = 0; j + 1 < nb; ++j) {
      GL += hg[j];
      HL += hh[j];
      nl += hc[j];
      if (nl == 0) continue;
      if (nl == rows.size()) break;
      const double gain = split_gain(GL, HL, G - GL, H - HL, params);
      const double objective = gain - params.gamma;
      if (objective > best_objective) {
        best_objective = objective;
        best = {f, bins.cuts(fu)[j], static_cast<std::uint32_t>(j), gain};
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gradient boosting

struct GBTConfig {
  int max_depth = 6;
  double learning_rate = 0.1;
  double subsample = 1.0;
  double colsample_bytree = 1.0;
  double gamma = 0.0;
  double reg_alpha = 0.0;
  double reg_lambda = 1.0;
  int n_rounds = 200;
  std::size_t bins = 256;
  /// Rounds without validation improvement before stopping; 0 disables.
  int early_stopping_patience = 20;
  std::uint64_t seed = 0;

  /// Structural validity only. The hyperparameter search ranges are enforced
  /// by the search space, not here.
  void validate() const {
    if (max_depth < 1) throw Error("max_depth must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw Error("subsample must be in (0, 1]");
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0))
      throw Error("colsample_bytree must be in (0, 1]");
    if (gamma < 0.0 || reg_alpha < 0.0 || reg_lambda < 0.0)
      throw Error("regularization terms must be non-negative");
    if (n_rounds < 0) throw Error("n_rounds must be non-negative");
    if (bins < 2) throw Error("bins must be >= 2");
  }
};

struct ValidationSet {
  const Matrix* X = nullptr;
  std::span<const double> y;
};

struct GbtFit {
  TreeEnsemble model;
  std::vector<double> train_rmse;  ///< after each kept round
  std::vector<double> val_rmse;    ///< empty without a validation set
  int best_rounds = 0;             ///< rounds kept in the model
};

namespace detail {

class GbtTreeBuilder {
 public:
  GbtTreeBuilder(const BinnedMatrix& bins, std::span<const double> grad, std::span<const double> hess,
                 std::span<const int> features, const GBTConfig& cfg)
      : bins_(bins), grad_(grad), hess_(hess), features_(features), cfg_(cfg),
        params_{cfg.reg_lambda, cfg.reg_alpha, cfg.gamma} {}

  RegressionTree build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(std::move(rows), 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double G = 0.0, H = 0.0;
    for (auto r : rows) {
      G += grad_[r];
      H += hess_[r];
    }
    SplitCandidate split;
    if (depth < cfg_.max_depth && rows.size() >= 2)
      split = find_best_split(bins_, grad_, hess_, rows, features_, params_);
    if (!split.valid()) {
      nodes_[static_cast<std::size_t>(id)].value = cfg_.learning_rate * leaf_weight(G, H, params_);
      return id;
    }
    std::vector<std::size_t> left, right;
    auto codes = bins_.feature_codes(static_cast<std::size_t>(split.feature));
    for (auto r : rows) (codes[r] <= split.bin ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.gain = split.gain;
    node.left = l;
    node.right = r;
    return id;
  }

  const BinnedMatrix& bins_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  std::span<const int> features_;
  const GBTConfig& cfg_;
  SplitParams params_;
  std::vector<TreeNode> nodes_;
};

inline std::size_t sample_count(double fraction, std::size_t n) {
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

}  // namespace detail

/// Boosting on squared error: base score mean(y), per round gradients
/// pred - y and unit hessians, seeded row/column subsampling per round. With a
/// validation set and a positive patience, training stops after `patience`
/// rounds without improvement and the model is truncated to the best round.
inline GbtFit fit_gbt(const Matrix& X, std::span<const double> y, const GBTConfig& cfg,
                      std::optional<ValidationSet> validation = std::nullopt) {
  cfg.validate();
  detail::check_training_data(X, y);
  if (validation && validation->X->cols() != X.cols())
    throw ArityMismatch(X.cols(), validation->X->cols());

  const std::size_t n = X.rows(), d = X.cols();
  const auto bins = BinnedMatrix::build(X, cfg.bins);

  GbtFit fit;
  fit.model.kind = EnsembleKind::Boosted;
  fit.model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  std::vector<double> pred(n, fit.model.base_score);
  std::vector<double> grad(n), hess(n, 1.0);
  std::vector<double> val_pred;
  if (validation) val_pred.assign(validation->y.size(), fit.model.base_score);

  double best_val = validation && !validation->y.empty() ? detail::rmse_of(val_pred, validation->y)
                                                         : std::numeric_limits<double>::infinity();
  int best_rounds = 0;
  int since_best = 0;

  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  std::vector<int> all_features(d);
  std::iota(all_features.begin(), all_features.end(), 0);

  for (int round = 0; round < cfg.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - y[i];

    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(round)));
    std::vector<std::size_t> rows = all_rows;
    if (cfg.subsample < 1.0) {
      rng.shuffle(std::span(rows));
      rows.resize(detail::sample_count(cfg.subsample, n));
      std::sort(rows.begin(), rows.end());
    }
    std::vector<int> features = all_features;
    if (cfg.colsample_bytree < 1.0) {
      rng.shuffle(std::span(features));
      features.resize(detail::sample_count(cfg.colsample_bytree, d));
      std::sort(features.begin(), features.end());
    }

    detail::GbtTreeBuilder builder(bins, grad, hess, features, cfg);
    auto tree = builder.build(std::move(rows));
    for (std::size_t i = 0; i < n; ++i) pred[i] += tree.predict(X.row(i));
    fit.train_rmse.push_back(detail::rmse_of(pred, y));
    fit.model.trees.push_back(std::move(tree));

    if (validation && !validation->y.empty()) {
      const auto& t = fit.model.trees.back();
      for (std::size_t i = 0; i < val_pred.size(); ++i) val_pred[i] += t.predict(validation->X->row(i));
      const double v = detail::rmse_of(val_pred, validation->y);
      fit.val_rmse.push_back(v);
      if (v < best_val) {
        best_val = v;
        best_rounds = round + 1;
        since_best = 0;
      } else if (cfg.early_stopping_patience > 0 && ++since_best >= cfg.early_stopping_patience) {
        break;
      }
    }
  }

  if (validation && !validation->y.empty() && cfg.early_stopping_patience > 0) {
    fit.model.trees.resize(static_cast<std::size_t>(best_rounds));
    fit.train_rmse.resize(static_cast<std::size_t>(best_rounds));
    fit.best_rounds = best_rounds;
  } else {
    fit.best_rounds = static_cast<int>(fit.model.trees.size());
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Random forest

struct RFConfig {
  int n_estimators = 100;
  int max_depth = 0;  ///< 0 = unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  double max_features = 1.0;  ///< fraction of features tried per split
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_estimators < 1) throw Error("n_estimators must be >= 1");
    if (max_depth < 0) throw Error("max_depth must be >= 0");
    if (min_samples_split < 2) throw Error("min_samples_split must be >= 2");
    if (min_samples_leaf < 1) throw Error("min_samples_leaf must be >= 1");
    if (!(max_features > 0.0 && max_features <= 1.0)) throw Error("max_features must be in (0, 1]");
  }
};

namespace detail {

class ForestTreeBuilder {
 public:
  ForestTreeBuilder(const Matrix& X, std::span<const double> y, const RFConfig& cfg, Rng& rng)
      : X_(X), y_(y), cfg_(cfg), rng_(rng) {
    const std::size_t d = X.cols();
    mtry_ = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(cfg.max_features * static_cast<double>(d) - 1e-12)), 1, d);
    features_.resize(d);
    std::iota(features_.begin(), features_.end(), 0);
  }

  RegressionTree build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(rows, 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  struct Best {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  int grow(std::vector<std::size_t>& rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto r : rows) {
      sum += y_[r];
      lo = std::min(lo, y_[r]);
      hi = std::max(hi, y_[r]);
    }
    const auto n = rows.size();
    const bool depth_ok = cfg_.max_depth == 0 || depth < cfg_.max_depth;
    Best best;
    if (lo == hi) {
      nodes_[static_cast<std::size_t>(id)].value = lo;
      return id;
    }
    if (depth_ok && n >= static_cast<std::size_t>(cfg_.min_samples_split) &&
        n >= 2 * static_cast<std::size_t>(cfg_.min_samples_leaf))
      best = find_split(rows, sum);
    if (best.feature < 0) {
      nodes_[static_cast<std::size_t>(id)].value = sum / static_cast<double>(n);
      return id;
    }
    std::vector<std::size_t> left, right;
    const auto f = static_cast<std::size_t>(best.feature);
    for (auto r : rows) (X_(r, f) < best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.gain = best.gain;
    node.left = l;
    node.right = r;
    return id;
  }

  /// Exhaustive variance-reduction search over a random feature subset.
  /// Gain is the drop in the node's sum of squared errors.
  Best find_split(const std::vector<std::size_t>& rows, double sum) {
    const std::size_t d = features_.size();
    for (std::size_t i = 0; i < mtry_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.below(d - i));
      std::swap(features_[i], features_[j]);
    }
    const auto n = rows.size();
    const auto min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    const double parent = sum * sum / static_cast<double>(n);
    Best best;
    pairs_.resize(n);
    for (std::size_t k = 0; k < mtry_; ++k) {
      const auto f = static_cast<std::size_t>(features_[k]);
      for (std::size_t i = 0; i < n; ++i) pairs_[i] = {X_(rows[i], f), y_[rows[i]]};
      std::sort(pairs_.begin(), pairs_.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double sl = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        sl += pairs_[i].second;
        const std::size_t nl = i + 1, nr = n - nl;
        if (pairs_[i].first == pairs_[i + 1].first) continue;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double sr = sum - sl;
        const double gain = sl * sl / static_cast<double>(nl) + sr * sr / static_cast<double>(nr) - parent;
        if (gain > best.gain) best = {static_cast<int>(f), split_point(pairs_[i].first, pairs_[i + 1].first), gain};
      }
    }
    return best;
  }

  const Matrix& X_;
  std::span<const double> y_;
  const RFConfig& cfg_;
  Rng& rng_;
  std::size_t mtry_ = 1;
  std::vector<int> features_;
  std::vector<std::pair<double, double>> pairs_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Bagged regression trees. Each tree uses its own generator seeded from
/// (seed, tree index), so the result does not depend on `workers`.
inline TreeEnsemble fit_rf(const Matrix& X, std::span<const double> y, const RFConfig& cfg,
                           unsigned workers = 1) {
  cfg.validate();
  detail::check_training_data(X, y);
  const std::size_t n = X.rows();
  TreeEnsemble forest;
  forest.kind = EnsembleKind::Forest;
  forest.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  forest.trees.resize(static_cast<std::size_t>(cfg.n_estimators));
  parallel_for(forest.trees.size(), workers, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, t));
    std::vector<std::size_t> rows(n);
    if (cfg.bootstrap) {
      for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    detail::ForestTreeBuilder builder(X, y, cfg, rng);
    forest.trees[t] = builder.build(std::move(rows));
  });
  return forest;
}

// ---------------------------------------------------------------------------
// Importance

struct FeatureScore {
  std::size_t feature = 0;
  std::string name;
  double score = 0.0;
};

/// Mean recorded gain over every split on each feature, across all trees.
/// Unused features are omitted; result is sorted by descending score (ties by
/// feature index) and truncated to `top_k` when non-zero.
inline std::vector<FeatureScore> gain_importance(const TreeEnsemble& model,
                                                 std::span<const std::string> names = {},
                                                 std::size_t top_k = 0) {
  std::vector<double> total;
  std::vector<std::size_t> count;
  for (const auto& tree : model.trees)
    for (const auto& node : tree.nodes()) {
      if (node.is_leaf()) continue;
      const auto f = static_cast<std::size_t>(node.feature);
      if (f >= total.size()) {
        total.resize(f + 1, 0.0);
        count.resize(f + 1, 0);
      }
      total[f] += node.gain;
      count[f] += 1;
    }
  std::vector<FeatureScore> out;
  for (std::size_t f = 0; f < total.size(); ++f)
    if (count[f] > 0)
      out.push_back({f, f < names.size() ? names[f] : "f" + std::to_string(f),
                     total[f] / static_cast<double>(count[f])});
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureScore& a, const FeatureScore& b) { return a.score > b.score; });
  if (top_k > 0 && out.size() > top_k) out.resize(top_k);
  return out;
}

}  // namespace soilpipe
