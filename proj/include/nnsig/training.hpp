#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nnsig/data.hpp"
#include "nnsig/error.hpp"
#include "nnsig/network.hpp"
#include "nnsig/random.hpp"

namespace nnsig {

// Hidden-layer widths plus activation; input and output widths come from the
// data (d) and the scalar output.
struct ArchSpec {
  std::vector<std::size_t> hidden;
  Activation activation = Activation::sigmoid;

  static ArchSpec uniform(std::size_t depth, std::size_t width, Activation act) {
    return ArchSpec{std::vector<std::size_t>(depth, width), act};
  }

  std::vector<std::size_t> layer_dims(std::size_t input_dim) const {
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    return dims;
  }
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double lr_decay = 0.995;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;     // relative improvement of the best loss over kPatience epochs
  double max_grad_norm = 10.0;
  double momentum = 0.9;       // heavy-ball; 0 gives plain mini-batch descent
  double moment_bound = 1e6;   // M used for the fitted model's certificate

  static constexpr std::size_t kPatience = 10;

  void validate() const {
    if (epochs == 0) throw ConfigError("training.epochs must be positive");
    if (batch_size == 0) throw ConfigError("training.batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("training.lr_decay must lie in (0, 1]");
    if (!(tolerance > 0.0)) throw ConfigError("training.tolerance must be positive");
    if (!(max_grad_norm > 0.0)) throw ConfigError("training.max_grad_norm must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("training.momentum must lie in [0, 1)");
  }
};

struct FittedModel {
  Network net;
  std::vector<double> train_loss_history;
  double final_empirical_risk = 0.0;
  std::size_t width_used = 0;
  MomentCertificate moment;
};

// (1/n) sum 1/2 (y_i - f(x_i))^2, summed sequentially in row order.
inline double quadratic_loss(const Network& net, const Matrix& X, std::span<const double> y) {
  if (X.rows() != y.size()) throw InputError("covariate and response lengths differ");
  if (y.empty()) throw InputError("quadratic_loss needs at least one sample");
  const auto f = forward_rows(net, X);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - f[i];
    s += 0.5 * r * r;
  }
  return s / static_cast<double>(y.size());
}

namespace detail {

// ceil(v) that ignores representation noise of a few ulps above an integer.
inline std::size_t robust_ceil(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) <= 1e-9 * std::max(1.0, std::abs(v))) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(v));
}

}  // namespace detail

// H_n = max(2, ceil(c * n^exponent)). With the default exponent 1/4 the
// architecture ratio H_n L^{L_d} / sqrt(n) decays like n^{-1/4} at fixed depth.
inline std::size_t width_schedule(std::size_t n, std::size_t depth, double lipschitz,
                                  double constant = 1.0, double exponent = 0.25) {
  (void)depth;
  (void)lipschitz;
  if (n < 2) throw ConfigError("width_schedule needs n >= 2");
  if (!(constant > 0.0) || !(exponent > 0.0 && exponent < 0.5)) {
    throw ConfigError("width schedule needs c > 0 and exponent in (0, 1/2)");
  }
  return std::max<std::size_t>(2, detail::robust_ceil(constant * std::pow(static_cast<double>(n), exponent)));
}

// Gradient of the mean quadratic loss over `batch` with respect to every
// weight and bias, stored in a network-shaped container.
inline Network loss_gradient(const Network& net, const Matrix& X, std::span<const double> y,
                             std::span<const std::size_t> batch) {
  Network grad = zero_network(net.layer_dims, net.activation);
  detail::Trace t;
  std::vector<std::vector<double>> delta;
  for (std::size_t i : batch) {
    detail::trace_forward(net, X.row(i), t);
    detail::trace_backward(net, t, delta);
    const double coef = -(y[i] - t.post.back()[0]);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      Matrix& gw = grad.weights[l];
      for (std::size_t r = 0; r < gw.rows(); ++r) {
        const double dr = coef * delta[l][r];
        auto row = gw.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += dr * t.post[l][c];
        grad.biases[l][r] += dr;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t l = 0; l < grad.num_layers(); ++l) {
    for (double& v : grad.weights[l].data()) v *= inv;
    for (double& v : grad.biases[l]) v *= inv;
  }
  return grad;
}

// One clipped heavy-ball step: v <- momentum v + g, theta <- theta - lr v.
// `velocity` must be network-shaped (zero on the first step).
inline void gradient_step(Network& net, Network& velocity, const Matrix& X, std::span<const double> y,
                          std::span<const std::size_t> batch, double learning_rate,
                          double momentum, double max_grad_norm) {
  Network g = loss_gradient(net, X, y, batch);
  double sq = 0.0;
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    for (double v : g.weights[l].data()) sq += v * v;
    for (double v : g.biases[l]) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  const double scale = norm > max_grad_norm ? max_grad_norm / norm : 1.0;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto w = net.weights[l].data();
    auto vw = velocity.weights[l].data();
    const auto gw = g.weights[l].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      vw[k] = momentum * vw[k] + scale * gw[k];
      w[k] -= learning_rate * vw[k];
    }
    auto& b = net.biases[l];
    auto& vb = velocity.biases[l];
    for (std::size_t k = 0; k < b.size(); ++k) {
      vb[k] = momentum * vb[k] + scale * g.biases[l][k];
      b[k] -= learning_rate * vb[k];
    }
  }
}

// Least-squares fit over the network class by mini-batch gradient descent.
// The best epoch is kept; if it does not beat the zero network, the zero
// network is returned. Fully deterministic for a given config seed.
inline FittedModel fit_least_squares(const Dataset& data, const ArchSpec& arch, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n == 0 || data.X.rows() != n) throw InputError("training data is empty or inconsistent");
  if (cfg.batch_size > n) throw ConfigError("batch_size exceeds the number of samples");
  for (double v : data.X.data()) {
    if (!(std::abs(v) <= 1.0 + 1e-12)) throw InputError("covariates must lie in [-1, 1]");
  }
  const auto dims = arch.layer_dims(data.dim());
  RandomStream init_rng(cfg.seed, stream_tag::kTrainingInit, 0);
  Network net = init_glorot(dims, arch.activation, init_rng);
  Network velocity = zero_network(dims, arch.activation);

  const Network zero = zero_network(dims, arch.activation);
  const double baseline = quadratic_loss(zero, data.X, data.y);

  FittedModel fm;
  Network best = net;
  double best_loss = quadratic_loss(net, data.X, data.y);
  double lr = cfg.learning_rate;
  std::vector<std::size_t> order(n);
  std::vector<double> best_history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RandomStream shuffle(cfg.seed, stream_tag::kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      gradient_step(net, velocity, data.X, data.y, std::span(order).subspan(start, len), lr,
                    cfg.momentum, cfg.max_grad_norm);
    }
    const double loss = quadratic_loss(net, data.X, data.y);
    if (!std::isfinite(loss)) throw DivergenceError(epoch, lr);
    fm.train_loss_history.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = net;
    }
    lr *= cfg.lr_decay;
    // Stop once the best loss has not improved by a relative `tolerance`
    // over the last kPatience epochs. Comparing running minima rather than
    // raw epoch losses keeps momentum noise from ending the fit early.
    best_history.push_back(best_loss);
    if (best_history.size() > TrainConfig::kPatience) {
      const double past = best_history[best_history.size() - 1 - TrainConfig::kPatience];
      if (past <= 0.0 || (past - best_loss) / past < cfg.tolerance) break;
    }
  }

  if (best_loss > baseline) best = zero;
  fm.net = std::move(best);
  fm.final_empirical_risk = quadratic_loss(fm.net, data.X, data.y);
  fm.width_used = fm.net.max_width();
  fm.moment = second_moment(fm.net, data.X, cfg.moment_bound);
  return fm;
}

inline void write_loss_history_csv(const FittedModel& fm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "epoch,loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < fm.train_loss_history.size(); ++e) {
    out << e + 1 << ',' << fm.train_loss_history[e] << '\n';
  }
}

}  // namespace nnsig
