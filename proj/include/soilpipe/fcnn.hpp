#pragma once

// Fully connected regression network: rectifier hidden layers with inverted
// dropout, identity output, MSE objective, SGD or Adam updates.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soilpipe/core/errors.hpp"
#include "soilpipe/core/matrix.hpp"
#include "soilpipe/core/random.hpp"

namespace soilpipe {

enum class OptimizerKind { Sgd, Adam };

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "SGD" : "Adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "SGD" || s == "sgd") return OptimizerKind::Sgd;
  if (s == "Adam" || s == "adam") return OptimizerKind::Adam;
  throw Error("unknown optimizer '" + std::string(s) + "'");
}

inline constexpr int kMaxHiddenLayers = 20;

struct NetConfig {
  std::vector<int> hidden;  ///< neurons per hidden layer
  double dropout_rate = 0.2;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int batch_size = 32;
  int epochs = 100;
  /// Epochs without validation improvement before stopping; 0 disables.
  int patience = 0;
  std::uint64_t seed = 0;

  int hidden_layers() const { return static_cast<int>(hidden.size()); }
  int total_neurons() const { return std::accumulate(hidden.begin(), hidden.end(), 0); }

  void validate() const {
    if (hidden.size() > kMaxHiddenLayers) throw Error("at most 20 hidden layers are supported");
    for (int h : hidden)
      if (h < 1) throw Error("hidden layer width must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must be in [0, 1)");
    if (learning_rate < 0.0) throw Error("learning_rate must be non-negative");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (epochs < 0) throw Error("epochs must be non-negative");
    if (patience < 0) throw Error("patience must be non-negative");
  }
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  ///< out x in, row-major
  std::vector<double> bias;

  double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct DenseNet {
  std::vector<DenseLayer> layers;  ///< hidden layers then the single-output layer
  double dropout_rate = 0.0;

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += (l.in + 1) * l.out;
    return n;
  }
  friend bool operator==(const DenseNet&, const DenseNet&) = default;
};

/// Glorot-uniform weights, zero biases; the output bias starts at
/// `output_bias` (training uses the target mean).
inline DenseNet make_net(std::size_t inputs, std::span<const int> hidden, double dropout_rate,
                         std::uint64_t seed, double output_bias = 0.0) {
  DenseNet net;
  net.dropout_rate = dropout_rate;
  Rng rng(seed);
  std::size_t fan_in = inputs;
  std::vector<std::size_t> widths(hidden.begin(), hidden.end());
  widths.push_back(1);
  for (auto fan_out : widths) {
    DenseLayer l;
    l.in = fan_in;
    l.out = fan_out;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    l.weights.resize(fan_in * fan_out);
    for (auto& w : l.weights) w = rng.uniform(-limit, limit);
    l.bias.assign(fan_out, 0.0);
    net.layers.push_back(std::move(l));
    fan_in = fan_out;
  }
  net.layers.back().bias[0] = output_bias;
  return net;
}

enum class Mode { Train, Eval };

namespace detail {

/// Activations of one forward pass, kept for backprop. acts[0] is the input;
/// acts[k+1] is the (post-dropout) output of layer k. pre[k] holds layer k's
/// pre-activations; mask[k] the dropout scale applied to hidden layer k.
struct ForwardCache {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> mask;
};

inline double forward_cached(const DenseNet& net, std::span<const double> row, Mode mode, Rng* rng,
                             ForwardCache& cache) {
  const std::size_t L = net.layers.size();
  cache.acts.resize(L + 1);
  cache.pre.resize(L);
  cache.mask.resize(L);
  cache.acts[0].assign(row.begin(), row.end());
  const bool drop = mode == Mode::Train && net.dropout_rate > 0.0;
  const double keep = 1.0 - net.dropout_rate;
  for (std::size_t k = 0; k < L; ++k) {
    const auto& layer = net.layers[k];
    const auto& x = cache.acts[k];
    auto& z = cache.pre[k];
    z.assign(layer.out, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.bias[o];
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * x[i];
      z[o] = s;
    }
    auto& a = cache.acts[k + 1];
    if (k + 1 == L) {
      a = z;
      break;
    }
    a.resize(layer.out);
    auto& m = cache.mask[k];
    m.assign(layer.out, 1.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double v = z[o] > 0.0 ? z[o] : 0.0;
      if (drop) {
        m[o] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        v *= m[o];
      }
      a[o] = v;
    }
  }
  return cache.acts[L][0];
}

}  // namespace detail

/// Prediction for one row. Train mode applies seeded inverted dropout to
/// hidden activations and requires `rng`; eval mode is deterministic.
inline double forward(const DenseNet& net, std::span<const double> row, Mode mode = Mode::Eval,
                      Rng* rng = nullptr) {
  if (row.size() != net.input_size()) throw ArityMismatch(net.input_size(), row.size());
  if (mode == Mode::Train && net.dropout_rate > 0.0 && rng == nullptr)
    throw Error("train-mode forward with dropout needs a generator");
  detail::ForwardCache cache;
  return detail::forward_cached(net, row, mode, rng, cache);
}

/// Same shapes as the network parameters.
struct NetGradient {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  static NetGradient zeros_like(const DenseNet& net) {
    NetGradient g;
    for (const auto& l : net.layers) {
      g.weights.emplace_back(l.weights.size(), 0.0);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }
};

namespace detail {

/// Adds d(scale * (pred - y)^2)/d(params) for one cached pass into `grad`.
inline void backward(const DenseNet& net, const ForwardCache& cache, double target, double scale,
                     NetGradient& grad) {
  const std::size_t L = net.layers.size();
  std::vector<double> delta{2.0 * scale * (cache.acts[L][0] - target)};
  for (std::size_t k = L; k-- > 0;) {
    const auto& layer = net.layers[k];
    const auto& x = cache.acts[k];
    auto& gw = grad.weights[k];
    auto& gb = grad.bias[k];
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* g = gw.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) g[i] += d * x[i];
    }
    if (k == 0) break;
    // delta for the previous hidden layer: through weights, dropout, ReLU.
    std::vector<double> prev(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] += d * w[i];
    }
    const auto& z = cache.pre[k - 1];
    const auto& m = cache.mask[k - 1];
    for (std::size_t i = 0; i < layer.in; ++i) prev[i] = z[i] > 0.0 ? prev[i] * m[i] : 0.0;
    delta = std::move(prev);
  }
}

}  // namespace detail

/// Mean squared error over `rows` in eval mode.
inline double mse_loss(const DenseNet& net, const Matrix& X, std::span<const double> y) {
  double s = 0.0;
  detail::ForwardCache cache;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const double e = detail::forward_cached(net, X.row(i), Mode::Eval, nullptr, cache) - y[i];
    s += e * e;
  }
  return s / static_cast<double>(X.rows());
}

/// Analytic gradient of the eval-mode MSE over all rows.
inline NetGradient loss_gradient(const DenseNet& net, const Matrix& X, std::span<const double> y) {
  auto grad = NetGradient::zeros_like(net);
  detail::ForwardCache cache;
  const double scale = 1.0 / static_cast<double>(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    detail::forward_cached(net, X.row(i), Mode::Eval, nullptr, cache);
    detail::backward(net, cache, y[i], scale, grad);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Training

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(int epoch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct EpochLoss {
  int epoch = 0;
  double train_rmse = 0.0;
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct NetFit {
  DenseNet net;
  std::vector<EpochLoss> trace;
  int best_epoch = -1;  ///< epoch whose weights were kept (-1: initial weights)
};

struct NetValidation {
  const Matrix* X = nullptr;
  std::span<const double> y;
};

/// Mini-batch training on MSE. Rows are reshuffled each epoch under the
/// seed; the final partial batch is kept. Adam uses beta1 0.9, beta2 0.999,
/// epsilon 1e-8; SGD has no momentum. With validation data the weights of
/// the best validation epoch are returned (training stops after `patience`
/// epochs without improvement), otherwise the final weights.
inline NetFit train_net(const Matrix& X, std::span<const double> y, const NetConfig& cfg,
                        std::optional<NetValidation> validation = std::nullopt,
                        std::optional<DenseNet> initial = std::nullopt) {
  cfg.validate();
  if (X.rows() != y.size()) throw ArityMismatch(X.rows(), y.size());
  if (X.rows() == 0) throw Error("training needs at least one row");
  for (double v : X.data())
    if (!std::isfinite(v)) throw Error("feature matrix contains a non-finite value");

  const double y_mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  DenseNet net = initial ? std::move(*initial)
                         : make_net(X.cols(), cfg.hidden, cfg.dropout_rate, derive_seed(cfg.seed, 1), y_mean);
  net.dropout_rate = cfg.dropout_rate;
  if (net.input_size() != X.cols()) throw ArityMismatch(net.input_size(), X.cols());

  const std::size_t n = X.rows();
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  Rng dropout_rng(derive_seed(cfg.seed, 3));

  auto m1 = NetGradient::zeros_like(net);
  auto m2 = NetGradient::zeros_like(net);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  NetFit fit;
  fit.net = net;
  double best_val = std::numeric_limits<double>::infinity();
  const bool has_val = validation && validation->X && validation->X->rows() > 0;
  if (has_val) best_val = std::sqrt(mse_loss(net, *validation->X, validation->y));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  detail::ForwardCache cache;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      auto grad = NetGradient::zeros_like(net);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto r = order[b];
        detail::forward_cached(net, X.row(r), Mode::Train, &dropout_rng, cache);
        detail::backward(net, cache, y[r], scale, grad);
      }
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < net.layers.size(); ++k) {
        auto update = [&](std::vector<double>& param, const std::vector<double>& g, std::vector<double>& v1,
                          std::vector<double>& v2) {
          for (std::size_t i = 0; i < param.size(); ++i) {
            if (cfg.optimizer == OptimizerKind::Sgd) {
              param[i] -= cfg.learning_rate * g[i];
              continue;
            }
            v1[i] = beta1 * v1[i] + (1.0 - beta1) * g[i];
            v2[i] = beta2 * v2[i] + (1.0 - beta2) * g[i] * g[i];
            param[i] -= cfg.learning_rate * (v1[i] / bc1) / (std::sqrt(v2[i] / bc2) + eps);
          }
        };
        update(net.layers[k].weights, grad.weights[k], m1.weights[k], m2.weights[k]);
        update(net.layers[k].bias, grad.bias[k], m1.bias[k], m2.bias[k]);
      }
    }

    EpochLoss loss;
    loss.epoch = epoch;
    loss.train_rmse = std::sqrt(mse_loss(net, X, y));
    if (!std::isfinite(loss.train_rmse)) throw NonFiniteLoss(epoch);
    if (has_val) {
      loss.val_rmse = std::sqrt(mse_loss(net, *validation->X, validation->y));
      if (!std::isfinite(loss.val_rmse)) throw NonFiniteLoss(epoch);
      if (loss.val_rmse < best_val) {
        best_val = loss.val_rmse;
        fit.net = net;
        fit.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    fit.trace.push_back(loss);
    if (has_val && cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  if (!has_val) {
    fit.net = net;
    fit.best_epoch = cfg.epochs - 1;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Gradient verification

/// Shifts hidden biases, layer by layer, by the smallest amount that puts
/// every pre-activation over `rows` at least `margin` away from the
/// rectifier kink, so finite differences stay on one linear piece. Earlier
/// layers are fixed first since their shifts move later pre-activations.
inline bool nudge_away_from_kinks(DenseNet& net, const Matrix& rows, double margin) {
  detail::ForwardCache cache;
  for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) {
    std::vector<std::vector<double>> z(net.layers[k].out);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      detail::forward_cached(net, rows.row(i), Mode::Eval, nullptr, cache);
      for (std::size_t o = 0; o < z.size(); ++o) z[o].push_back(cache.pre[k][o]);
    }
    for (std::size_t o = 0; o < z.size(); ++o) {
      auto clear = [&](double shift) {
        for (double v : z[o])
          if (std::abs(v + shift) < margin) return false;
        return true;
      };
      std::vector<double> candidates{0.0};
      for (double v : z[o]) {
        candidates.push_back(-v + 1.5 * margin);
        candidates.push_back(-v - 1.5 * margin);
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](double a, double b) { return std::abs(a) < std::abs(b); });
      bool done = false;
      for (double shift : candidates)
        if (clear(shift)) {
          net.layers[k].bias[o] += shift;
          done = true;
          break;
        }
      if (!done) return false;
    }
  }
  return true;
}

/// Largest relative discrepancy |a - n| / max(|a| + |n|, 1e-8) between the
/// backprop gradient `a` and the central difference `n` over all parameters,
/// for the eval-mode MSE. Callers avoid rectifier kinks (see
/// nudge_away_from_kinks).
inline double gradient_check(const DenseNet& net, const Matrix& rows, std::span<const double> targets,
                             double epsilon) {
  const auto analytic = loss_gradient(net, rows, targets);
  DenseNet probe = net;
  probe.dropout_rate = 0.0;
  double worst = 0.0;
  auto check = [&](double& param, double a) {
    const double saved = param;
    param = saved + epsilon;
    const double up = mse_loss(probe, rows, targets);
    param = saved - epsilon;
    const double down = mse_loss(probe, rows, targets);
    param = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-8);
    worst = std::max(worst, rel);
  };
  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    for (std::size_t i = 0; i < probe.layers[k].weights.size(); ++i)
      check(probe.layers[k].weights[i], analytic.weights[k][i]);
    for (std::size_t i = 0; i < probe.layers[k].bias.size(); ++i)
      check(probe.layers[k].bias[i], analytic.bias[k][i]);
  }
  return worst;
}

}  // namespace soilpipe
