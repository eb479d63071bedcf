#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nnsig/data.hpp"
#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/network.hpp"
#include "nnsig/parallel.hpp"
#include "nnsig/random.hpp"
#include "nnsig/training.hpp"

namespace nnsig {

struct RademacherEstimate {
  double value = 0.0;
  std::size_t n = 0;
  std::size_t n_eps = 0;
  std::size_t n_class = 0;
  double std_error = 0.0;
};

struct RateReport {
  std::vector<double> x_values;
  std::vector<double> errors;
  double log_log_slope = 0.0;
  double slope_stderr = 0.0;
  std::vector<std::string> warnings;
};

// Produces the k-th member of a (finite sample of a) function class.
using ClassSampler = std::function<Network(std::size_t k)>;

inline ClassSampler glorot_class(std::vector<std::size_t> dims, Activation act, std::uint64_t seed) {
  return [dims = std::move(dims), act, seed](std::size_t k) {
    RandomStream rng(seed, stream_tag::kNetworkSampling, k);
    return init_glorot(dims, act, rng);
  };
}

// Class of constant functions f == value (a network whose only nonzero
// parameter is the output bias).
inline ClassSampler constant_class(std::size_t input_dim, double value) {
  return [input_dim, value](std::size_t) {
    const std::size_t dims[] = {input_dim, 1};
    Network net = zero_network(dims, Activation::tanh);
    net.biases[0][0] = value;
    return net;
  };
}

// Sign vector of Rademacher draw t. Draws depend only on (seed, t), so every
// class and every prefix length n sees the same signs.
inline std::vector<double> rademacher_signs(std::uint64_t seed, std::size_t t, std::size_t n) {
  RandomStream rng(seed, stream_tag::kRademacher, t);
  std::vector<double> eps(n);
  for (double& e : eps) e = rng.rademacher();
  return eps;
}

// Monte-Carlo empirical Rademacher complexity with the supremum replaced by
// a maximum over the rows of F (class outputs on the sample). This is a lower
// bound on the supremum over the full class.
inline RademacherEstimate rademacher_from_outputs(const Matrix& F, std::size_t n_eps, std::uint64_t seed,
                                                  std::size_t threads = 1) {
  if (n_eps == 0 || F.rows() == 0) throw ConfigError("Rademacher estimate needs n_eps, n_class >= 1");
  const std::size_t n = F.cols();
  if (n == 0) throw InputError("Rademacher estimate needs at least one sample point");
  std::vector<double> sups(n_eps);
  parallel_for(n_eps, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t t = b; t < e; ++t) {
      const auto eps = rademacher_signs(seed, t, n);
      double best = 0.0;
      for (std::size_t k = 0; k < F.rows(); ++k) {
        const auto f = F.row(k);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += eps[i] * f[i];
        best = std::max(best, std::abs(s / static_cast<double>(n)));
      }
      sups[t] = best;
    }
  });
  double mean = 0.0;
  for (double v : sups) mean += v;
  mean /= static_cast<double>(n_eps);
  double var = 0.0;
  for (double v : sups) var += (v - mean) * (v - mean);
  RademacherEstimate est;
  est.value = mean;
  est.n = n;
  est.n_eps = n_eps;
  est.n_class = F.rows();
  est.std_error = n_eps > 1 ? std::sqrt(var / static_cast<double>(n_eps - 1) / static_cast<double>(n_eps)) : 0.0;
  return est;
}

inline Matrix class_outputs(const ClassSampler& sampler, const Matrix& X, std::size_t n_class,
                            std::size_t threads = 1) {
  Matrix F(n_class, X.rows());
  parallel_for(n_class, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      const auto f = forward_rows(sampler(k), X);
      std::copy(f.begin(), f.end(), F.row(k).begin());
    }
  });
  return F;
}

inline RademacherEstimate estimate_rademacher(const ClassSampler& sampler, const Matrix& X, std::size_t n_eps,
                                              std::size_t n_class, std::uint64_t seed, std::size_t threads = 1) {
  if (n_eps == 0 || n_class == 0) throw ConfigError("Rademacher estimate needs n_eps, n_class >= 1");
  return rademacher_from_outputs(class_outputs(sampler, X, n_class, threads), n_eps, seed, threads);
}

// Localization radius r_n = H_n L^{L_d} / sqrt(n).
inline double localization_radius(double width, double lipschitz, double depth, std::size_t n) {
  return width * std::pow(lipschitz, depth) / std::sqrt(static_cast<double>(n));
}

// Indices of the networks within empirical squared distance r of ref.
inline std::vector<std::size_t> localize(std::span<const Network> nets, const Network& ref, const Matrix& X,
                                         double r) {
  if (!(r >= 0.0)) throw ConfigError("localization radius must be nonnegative");
  if (X.rows() == 0) throw InputError("localize needs at least one covariate row");
  const auto f_ref = forward_rows(ref, X);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto f = forward_rows(nets[k], X);
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += (f[i] - f_ref[i]) * (f[i] - f_ref[i]);
    if (s / static_cast<double>(f.size()) <= r) kept.push_back(k);
  }
  return kept;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

// Ordinary least squares of log(y) on log(x). The slope standard error uses
// the residual variance with n - 2 degrees of freedom (0 when n == 2).
inline LineFit fit_log_log(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("log-log fit needs >= 2 matched points");
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericalError("log-log fit needs positive values");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw NumericalError("log-log fit needs distinct x values");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ly[i] - fit.intercept - fit.slope * lx[i];
      rss += r * r;
    }
    fit.slope_stderr = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  }
  return fit;
}

// Single hidden layer by default: width is then the only capacity knob, and
// the fits converge well enough for the width trend to show.
struct ApproximationExperiment {
  std::size_t depth = 1;
  Activation activation = Activation::tanh;
  double holdout_fraction = 0.5;
};

// Fits one network per width on half of a generated sample and records the
// held-out RMSE against the noiseless target. Widths whose training diverges
// are reported in `warnings` and left out of the regression.
inline RateReport approximation_rate_experiment(const TargetSpec& target, std::span<const std::size_t> widths,
                                                std::size_t n, std::size_t d, const TrainConfig& train_cfg,
                                                std::uint64_t seed, const ApproximationExperiment& exp = {},
                                                std::size_t threads = 1) {
  if (widths.size() < 3) throw ConfigError("approximation experiment needs at least 3 widths");
  for (std::size_t k = 1; k < widths.size(); ++k) {
    if (widths[k] <= widths[k - 1]) throw ConfigError("widths must be strictly increasing");
  }
  const Dataset all = generate(target, n, d, substream_seed(seed, stream_tag::kExperiment, 0));
  auto [train, test] = split(all, 1.0 - exp.holdout_fraction, seed);

  std::vector<double> rmse(widths.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> failures(widths.size());
  parallel_for(widths.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      try {
        const auto fm = fit_least_squares(train, ArchSpec::uniform(exp.depth, widths[k], exp.activation), train_cfg);
        const auto pred = forward_rows(fm.net, test.X);
        double s = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          const double r = pred[i] - target.evaluate(test.X.row(i));
          s += r * r;
        }
        rmse[k] = std::sqrt(s / static_cast<double>(pred.size()));
      } catch (const NumericalError& err) {
        failures[k] = "width " + std::to_string(widths[k]) + " excluded: " + err.what();
      }
    }
  });

  RateReport rep;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (!failures[k].empty()) {
      rep.warnings.push_back(failures[k]);
      continue;
    }
    rep.x_values.push_back(static_cast<double>(widths[k]));
    rep.errors.push_back(rmse[k]);
  }
  if (rep.x_values.size() >= 2) {
    const auto fit = fit_log_log(rep.x_values, rep.errors);
    rep.log_log_slope = fit.slope;
    rep.slope_stderr = fit.slope_stderr;
  } else {
    rep.warnings.push_back("fewer than two widths trained; no slope");
  }
  return rep;
}

struct ComplexityExperiment {
  std::size_t n_eps = 200;
  std::size_t n_class = 50;
};

// Rademacher estimate of a fixed Glorot-sampled class on nested samples of
// the sizes in n_list (rows are prefixes of one uniform draw on [-1,1]^d),
// with shared sign draws, and the log-log slope against n.
inline RateReport complexity_scaling_experiment(const ArchSpec& arch, std::size_t d,
                                                std::span<const std::size_t> n_list,
                                                const ComplexityExperiment& cfg, std::uint64_t seed,
                                                std::size_t threads = 1,
                                                std::vector<RademacherEstimate>* estimates = nullptr) {
  if (n_list.size() < 3) throw ConfigError("complexity experiment needs at least 3 sample sizes");
  for (std::size_t k = 1; k < n_list.size(); ++k) {
    if (n_list[k] <= n_list[k - 1]) throw ConfigError("sample sizes must be strictly increasing");
  }
  const std::size_t n_max = n_list.back();
  Matrix X_all(n_max, d);
  RandomStream cov(seed, stream_tag::kCovariates, 0);
  for (double& v : X_all.data()) v = cov.uniform(-1.0, 1.0);
  const Matrix F_all = class_outputs(glorot_class(arch.layer_dims(d), arch.activation, seed), X_all,
                                     cfg.n_class, threads);
  RateReport rep;
  for (std::size_t n : n_list) {
    Matrix F(cfg.n_class, n);
    for (std::size_t k = 0; k < cfg.n_class; ++k) {
      const auto src = F_all.row(k).first(n);
      std::copy(src.begin(), src.end(), F.row(k).begin());
    }
    const auto est = rademacher_from_outputs(F, cfg.n_eps, seed, threads);
    if (estimates) estimates->push_back(est);
    rep.x_values.push_back(static_cast<double>(n));
    rep.errors.push_back(est.value);
  }
  const auto fit = fit_log_log(rep.x_values, rep.errors);
  rep.log_log_slope = fit.slope;
  rep.slope_stderr = fit.slope_stderr;
  return rep;
}

inline void write_rate_csv(const RateReport& rep, const std::string& path, const std::string& x_name) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << x_name << ",error\n";
  out.precision(17);
  for (std::size_t k = 0; k < rep.x_values.size(); ++k) out << rep.x_values[k] << ',' << rep.errors[k] << '\n';
}

}  // namespace nnsig
