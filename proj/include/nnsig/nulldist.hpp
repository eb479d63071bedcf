#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nnsig/data.hpp"
#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/network.hpp"
#include "nnsig/parallel.hpp"
#include "nnsig/random.hpp"
#include "nnsig/significance.hpp"
#include "nnsig/training.hpp"

namespace nnsig {

// How the output Gram matrix is scaled before simulation. `four_sigma2`
// multiplies by 4 sigma^2 with sigma^2 estimated as twice the fitted
// quadratic risk. Selection of the maximizer is invariant to this factor.
enum class SigmaScale { raw, four_sigma2 };

inline std::string_view to_string(SigmaScale s) { return s == SigmaScale::raw ? "raw" : "four_sigma2"; }

inline SigmaScale parse_sigma_scale(std::string_view s) {
  if (s == "raw") return SigmaScale::raw;
  if (s == "four_sigma2") return SigmaScale::four_sigma2;
  throw ConfigError("unknown sigma_scale '" + std::string(s) + "'");
}

struct NullConfig {
  std::size_t m = 200;           // sampled networks
  std::size_t n_p = 1000;        // null replications
  double lambda_shrink = 0.0;
  double alpha_adapt = 0.0;      // 0 disables adaptive growth of m
  std::size_t m_max = 0;         // 0 means "same as m"
  double adapt_tol = 1e-3;
  std::size_t max_adapt_rounds = 20;
  SigmaScale sigma_scale = SigmaScale::raw;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::size_t effective_m_max() const noexcept { return m_max == 0 ? m : m_max; }

  void validate() const {
    if (m < 2) throw ConfigError("test.m must be at least 2 (the covariance needs two networks)");
    if (m > effective_m_max()) throw ConfigError("test.m exceeds test.m_max");
    if (n_p < 1) throw ConfigError("test.n_p must be at least 1");
    if (!(lambda_shrink >= 0.0 && lambda_shrink <= 1.0)) {
      throw ConfigError("test.lambda_shrink must lie in [0, 1]");
    }
    if (!(alpha_adapt >= 0.0)) throw ConfigError("test.alpha_adapt must be nonnegative");
    if (!(adapt_tol > 0.0)) throw ConfigError("test.adapt_tol must be positive");
    if (threads == 0) throw ConfigError("test.threads must be positive");
  }
};

struct CovMatrix {
  Matrix entries;
  bool shrunk = false;
  std::optional<Matrix> chol_factor;
  double jitter_used = 0.0;

  std::size_t dim() const noexcept { return entries.rows(); }
};

// The m networks of the null cover share the fitted architecture. Network k
// is drawn from substream (seed, network-sampling, k), so growing m appends
// networks without changing the existing ones.
inline std::vector<Network> sample_networks(std::size_t m, std::span<const std::size_t> dims,
                                            Activation act, std::uint64_t seed,
                                            std::size_t first = 0) {
  if (first == 0 && m < 2) throw ConfigError("sample_networks needs m >= 2");
  std::vector<Network> nets;
  nets.reserve(m);
  for (std::size_t k = first; k < first + m; ++k) {
    RandomStream rng(seed, stream_tag::kNetworkSampling, k);
    nets.push_back(init_glorot(dims, act, rng));
  }
  return nets;
}

// Row l holds f_l(x_1..x_n).
inline Matrix network_outputs(std::span<const Network> nets, const Matrix& X, std::size_t threads = 1) {
  Matrix F(nets.size(), X.rows());
  parallel_for(nets.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t l = b; l < e; ++l) {
      const auto f = forward_rows(nets[l], X);
      std::copy(f.begin(), f.end(), F.row(l).begin());
    }
  });
  return F;
}

// Sigma_{lk} = factor * (1/n) sum_i F_{l,i} F_{k,i}; the upper triangle is
// computed and mirrored so the result is exactly symmetric.
inline CovMatrix gram_from_outputs(const Matrix& F, double factor = 1.0, std::size_t threads = 1) {
  const std::size_t m = F.rows();
  const std::size_t n = F.cols();
  if (n == 0) throw InputError("covariance needs at least one covariate row");
  CovMatrix cov;
  cov.entries = Matrix(m, m);
  parallel_for(m, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t l = b; l < e; ++l) {
      const auto fl = F.row(l);
      for (std::size_t k = l; k < m; ++k) {
        const auto fk = F.row(k);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += fl[i] * fk[i];
        cov.entries(l, k) = factor * (s / static_cast<double>(n));
      }
    }
  });
  for (std::size_t l = 0; l < m; ++l) {
    for (std::size_t k = 0; k < l; ++k) cov.entries(l, k) = cov.entries(k, l);
  }
  return cov;
}

inline double sigma_scale_factor(SigmaScale scale, double sigma2_hat) {
  if (scale == SigmaScale::raw) return 1.0;
  if (!(sigma2_hat > 0.0) || !std::isfinite(sigma2_hat)) {
    throw NumericalError("four_sigma2 scaling needs a positive residual variance estimate");
  }
  return 4.0 * sigma2_hat;
}

inline CovMatrix empirical_covariance(std::span<const Network> nets, const Matrix& X, SigmaScale scale,
                                      double sigma2_hat = 0.0, std::size_t threads = 1) {
  if (nets.size() < 2) throw ConfigError("empirical_covariance needs at least two networks");
  if (X.rows() == 0) throw InputError("empirical_covariance needs at least one covariate row");
  return gram_from_outputs(network_outputs(nets, X, threads), sigma_scale_factor(scale, sigma2_hat),
                           threads);
}

// (1 - lambda) Sigma + lambda diag(Sigma): off-diagonals scaled by (1 - lambda),
// diagonal kept as is.
inline CovMatrix shrink(const CovMatrix& cov, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("shrinkage lambda must lie in [0, 1]");
  CovMatrix out;
  out.entries = cov.entries;
  const double keep = 1.0 - lambda;
  for (std::size_t l = 0; l < out.dim(); ++l) {
    for (std::size_t k = 0; k < out.dim(); ++k) {
      if (l != k) out.entries(l, k) = keep * cov.entries(l, k);
    }
  }
  out.shrunk = cov.shrunk || lambda > 0.0;
  return out;
}

namespace detail {

// Plain Cholesky of A + jitter I; nullopt when a pivot is not positive.
inline std::optional<Matrix> try_cholesky(const Matrix& a, double jitter) {
  const std::size_t m = a.rows();
  Matrix L(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    double d = a(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (std::size_t i = j + 1; i < m; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / ljj;
    }
  }
  return L;
}

}  // namespace detail

// Factorizes cov + jitter I with jitter in {0, 1e-10 t, 1e-9 t, ..., 1e-6 t},
// t = trace(cov) / m, taking the first level that succeeds.
inline CovMatrix cholesky_with_jitter(const CovMatrix& cov) {
  const std::size_t m = cov.dim();
  if (m == 0 || cov.entries.cols() != m) throw InputError("covariance must be square and nonempty");
  double trace = 0.0;
  for (std::size_t i = 0; i < m; ++i) trace += cov.entries(i, i);
  const double t = trace / static_cast<double>(m);
  CovMatrix out = cov;
  for (int level = 0; level <= 5; ++level) {
    const double jitter = level == 0 ? 0.0 : t * std::pow(10.0, -11 + level);
    if (level > 0 && !(jitter > 0.0)) break;
    if (auto L = detail::try_cholesky(cov.entries, jitter)) {
      out.chol_factor = std::move(*L);
      out.jitter_used = jitter;
      return out;
    }
  }
  throw NumericalError(
      "covariance factorization failed even with jitter 1e-6 * trace/m; "
      "increase test.lambda_shrink to stabilize the covariance");
}

// Index of the largest component of z = L g (ties go to the lowest index).
inline std::size_t select_maximizer(const Matrix& chol, std::span<const double> g) {
  const std::size_t m = chol.rows();
  if (g.size() != m) throw InputError("normal draw has the wrong dimension");
  std::size_t best = 0;
  double best_z = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double z = 0.0;
    const auto row = chol.row(i);
    for (std::size_t k = 0; k <= i; ++k) z += row[k] * g[k];
    if (i == 0 || z > best_z) {
      best = i;
      best_z = z;
    }
  }
  return best;
}

inline std::size_t draw_maximizer(const Matrix& chol, RandomStream& rng) {
  std::vector<double> g(chol.rows());
  for (double& v : g) v = rng.gaussian();
  return select_maximizer(chol, g);
}

// One draw from the discretized null: pick the maximizing network of a
// N(0, Sigma) draw and return its statistic for variable j.
inline double null_sample(std::span<const Network> nets, const CovMatrix& cov, const Matrix& X,
                          std::size_t j, const StatConfig& stat_cfg, RandomStream& rng) {
  if (!cov.chol_factor) throw InputError("null_sample needs a factorized covariance");
  if (cov.dim() != nets.size()) throw InputError("covariance and network count differ");
  const std::size_t idx = draw_maximizer(*cov.chol_factor, rng);
  return empirical_test_statistic(nets[idx], X, j, stat_cfg).normalized;
}

// Number of networks for the next adaptive round:
//   ceil(m_k (1 + alpha * delta)), capped at m_max.
inline std::size_t adaptive_m(std::size_t m_k, double alpha, double delta_frobenius, std::size_t m_max) {
  if (!(alpha >= 0.0) || !(delta_frobenius >= 0.0)) throw ConfigError("adaptive_m needs alpha, delta >= 0");
  const double grown = static_cast<double>(m_k) * (1.0 + alpha * delta_frobenius);
  return std::min(m_max, std::max(m_k, detail::robust_ceil(grown)));
}

struct CovarianceChange {
  double delta = 0.0;     // ||K_curr - K_prev||_F
  double relative = 0.0;  // delta / ||K_curr||_F
};

// Change between two covariance estimates expressed per network, i.e. for
// the operators K = Sigma / m. When `curr` extends `prev` by appended
// networks (prev is its leading block), both operators act on the same data
// and the distance is
//   ||K_c - K_p||_F^2 = sum_{l,k} a_l a_k Sigma_{lk}^2,
//   a_l = 1/m_c - 1/m_p (old networks), 1/m_c (new networks),
// computed from curr's entries alone. For equal dimensions this reduces to
// ||Sigma_c - Sigma_p||_F / m.
inline CovarianceChange covariance_change(const CovMatrix& prev, const CovMatrix& curr) {
  const std::size_t mp = prev.dim();
  const std::size_t mc = curr.dim();
  if (mp == 0 || mc < mp) throw InputError("covariance_change needs dim(prev) <= dim(curr)");
  CovarianceChange out;
  double norm_sq = 0.0;
  for (double v : curr.entries.data()) norm_sq += v * v;
  const double norm_k = std::sqrt(norm_sq) / static_cast<double>(mc);
  if (mp == mc) {
    double s = 0.0;
    for (std::size_t i = 0; i < mc * mc; ++i) {
      const double d = curr.entries.data()[i] - prev.entries.data()[i];
      s += d * d;
    }
    out.delta = std::sqrt(s) / static_cast<double>(mc);
  } else {
    std::vector<double> a(mc, 1.0 / static_cast<double>(mc));
    for (std::size_t l = 0; l < mp; ++l) a[l] -= 1.0 / static_cast<double>(mp);
    double s = 0.0;
    for (std::size_t l = 0; l < mc; ++l) {
      for (std::size_t k = 0; k < mc; ++k) {
        const double v = curr.entries(l, k);
        s += a[l] * a[k] * v * v;
      }
    }
    out.delta = std::sqrt(std::max(0.0, s));
  }
  out.relative = norm_k > 0.0 ? out.delta / norm_k : 0.0;
  return out;
}

inline CovMatrix leading_block(const CovMatrix& cov, std::size_t k) {
  CovMatrix out;
  out.entries = Matrix(k, k);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t c = 0; c < k; ++c) out.entries(l, c) = cov.entries(l, c);
  }
  out.shrunk = cov.shrunk;
  return out;
}

// Everything the null draws share: the sampled cover, its factorized
// covariance and every network's statistic for every variable.
struct NullModel {
  std::vector<Network> nets;
  CovMatrix cov;
  Matrix net_statistics;              // m x d, normalized statistics
  std::vector<std::size_t> m_history; // m at each adaptive round
  double sigma2_hat = 0.0;

  std::size_t m() const noexcept { return nets.size(); }
};

inline NullModel prepare_null_model(const FittedModel& fitted, const Dataset& data, const NullConfig& cfg,
                                    const StatConfig& stat_cfg) {
  cfg.validate();
  if (fitted.net.input_dim() != data.dim()) {
    throw InputError("fitted network input dimension does not match the dataset");
  }
  const auto& dims = fitted.net.layer_dims;
  const Activation act = fitted.net.activation;
  NullModel model;
  model.sigma2_hat = 2.0 * fitted.final_empirical_risk;
  const double factor = sigma_scale_factor(cfg.sigma_scale, model.sigma2_hat);

  model.nets = sample_networks(cfg.m, dims, act, cfg.seed);
  Matrix F = network_outputs(model.nets, data.X, cfg.threads);
  CovMatrix cov = gram_from_outputs(F, factor, cfg.threads);
  model.m_history.push_back(model.m());

  if (cfg.alpha_adapt > 0.0) {
    const std::size_t m_max = cfg.effective_m_max();
    CovMatrix prev = leading_block(cov, (model.m() + 1) / 2);
    for (std::size_t round = 0; round < cfg.max_adapt_rounds && model.m() < m_max; ++round) {
      const auto change = covariance_change(prev, cov);
      if (change.relative < cfg.adapt_tol) break;
      const std::size_t m_next = adaptive_m(model.m(), cfg.alpha_adapt, change.delta, m_max);
      if (m_next == model.m()) break;
      auto extra = sample_networks(m_next - model.m(), dims, act, cfg.seed, model.m());
      model.nets.insert(model.nets.end(), std::make_move_iterator(extra.begin()),
                        std::make_move_iterator(extra.end()));
      F = network_outputs(model.nets, data.X, cfg.threads);
      prev = std::move(cov);
      cov = gram_from_outputs(F, factor, cfg.threads);
      model.m_history.push_back(model.m());
    }
  }

  if (cfg.lambda_shrink > 0.0) cov = shrink(cov, cfg.lambda_shrink);
  model.cov = cholesky_with_jitter(cov);

  model.net_statistics = Matrix(model.m(), data.dim());
  parallel_for(model.m(), cfg.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t l = b; l < e; ++l) {
      const auto stats = all_statistics(model.nets[l], data.X, stat_cfg);
      for (std::size_t j = 0; j < stats.size(); ++j) model.net_statistics(l, j) = stats[j].normalized;
    }
  });
  return model;
}

// Indices of the maximizing networks for replications 0..n_p-1. Replication
// r uses substream (seed, null-draws, r).
inline std::vector<std::size_t> draw_maximizers(const NullModel& model, const NullConfig& cfg) {
  std::vector<std::size_t> idx(cfg.n_p);
  const Matrix& chol = *model.cov.chol_factor;
  parallel_for(cfg.n_p, cfg.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      RandomStream rng(cfg.seed, stream_tag::kNullDraws, r);
      idx[r] = draw_maximizer(chol, rng);
    }
  });
  return idx;
}

inline std::vector<double> null_samples_for(const NullModel& model, std::span<const std::size_t> maximizers,
                                            std::size_t j) {
  if (j >= model.net_statistics.cols()) throw InputError("variable index out of range");
  std::vector<double> out(maximizers.size());
  for (std::size_t r = 0; r < maximizers.size(); ++r) out[r] = model.net_statistics(maximizers[r], j);
  return out;
}

inline std::vector<double> null_distribution(const FittedModel& fitted, const Dataset& data, std::size_t j,
                                             const NullConfig& cfg, const StatConfig& stat_cfg = {}) {
  if (j >= data.dim()) throw InputError("variable index out of range");
  const NullModel model = prepare_null_model(fitted, data, cfg, stat_cfg);
  return null_samples_for(model, draw_maximizers(model, cfg), j);
}

// (1 + #{null >= observed}) / (n_p + 1)
inline double monte_carlo_p_value(double observed, std::span<const double> null_samples) {
  std::size_t exceed = 0;
  for (double v : null_samples) {
    if (v >= observed) ++exceed;
  }
  return static_cast<double>(1 + exceed) / static_cast<double>(null_samples.size() + 1);
}

struct TestResult {
  std::size_t variable_index = 0;
  VariableStatistic observed;
  std::vector<double> null_samples;
  double p_value = 1.0;
  std::size_t m_final = 0;
  std::uint64_t seed = 0;
  NullConfig config;
  StatConfig stat_config;
};

// Tests several variables against one shared null model and one set of
// maximizer draws.
inline std::vector<TestResult> significance_tests(const FittedModel& fitted, const Dataset& data,
                                                  std::span<const std::size_t> variables,
                                                  const NullConfig& cfg, const StatConfig& stat_cfg = {}) {
  for (std::size_t j : variables) {
    if (j >= data.dim()) {
      throw ConfigError("variable index " + std::to_string(j) + " out of range for d = " +
                        std::to_string(data.dim()));
    }
  }
  const NullModel model = prepare_null_model(fitted, data, cfg, stat_cfg);
  const auto maximizers = draw_maximizers(model, cfg);
  const auto observed = all_statistics(fitted.net, data.X, stat_cfg);
  std::vector<TestResult> results;
  for (std::size_t j : variables) {
    TestResult r;
    r.variable_index = j;
    r.observed = observed[j];
    r.null_samples = null_samples_for(model, maximizers, j);
    r.p_value = monte_carlo_p_value(r.observed.normalized, r.null_samples);
    r.m_final = model.m();
    r.seed = cfg.seed;
    r.config = cfg;
    r.stat_config = stat_cfg;
    results.push_back(std::move(r));
  }
  return results;
}

inline TestResult significance_test(const FittedModel& fitted, const Dataset& data, std::size_t j,
                                    const NullConfig& cfg, const StatConfig& stat_cfg = {}) {
  const std::size_t vars[] = {j};
  return std::move(significance_tests(fitted, data, vars, cfg, stat_cfg).front());
}

}  // namespace nnsig
