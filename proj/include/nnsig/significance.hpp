#pragma once

#include <cmath>
#include <optional>
#include <string_view>
#include <vector>

#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/network.hpp"

namespace nnsig {

enum class NormalizationMode { identity, rate };

inline std::string_view to_string(NormalizationMode m) {
  return m == NormalizationMode::identity ? "identity" : "rate";
}

inline NormalizationMode parse_normalization(std::string_view s) {
  if (s == "identity") return NormalizationMode::identity;
  if (s == "rate") return NormalizationMode::rate;
  throw ConfigError("unknown normalization mode '" + std::string(s) + "'");
}

// Constants of the rate-mode normalization
//   U = sqrt(H_n L^{L_d} / sqrt(n)) + H_n^{-s/d}.
struct RateConstants {
  double width = 0.0;        // H_n
  double lipschitz = 0.0;    // L
  double depth = 0.0;        // L_d
  double s_over_d = 0.0;
};

struct StatConfig {
  NormalizationMode normalization_mode = NormalizationMode::identity;
  std::optional<RateConstants> rate_constants;
};

struct VariableStatistic {
  std::size_t variable_index = 0;
  double raw = 0.0;         // (1/n) sum_i (df/dx_j (x_i))^2
  double normalized = 0.0;  // raw / U^2
  std::size_t n_used = 0;
};

inline double normalization_factor(const StatConfig& cfg, std::size_t n) {
  if (n == 0) throw InputError("normalization_factor needs n >= 1");
  if (cfg.normalization_mode == NormalizationMode::identity) return 1.0;
  if (!cfg.rate_constants) throw ConfigError("rate normalization requires rate constants");
  const auto& rc = *cfg.rate_constants;
  if (!(rc.width > 0.0 && rc.lipschitz > 0.0 && rc.depth >= 0.0 && rc.s_over_d > 0.0)) {
    throw ConfigError("rate normalization constants must be positive");
  }
  const double complexity = rc.width * std::pow(rc.lipschitz, rc.depth) / std::sqrt(static_cast<double>(n));
  return std::sqrt(complexity) + std::pow(rc.width, -rc.s_over_d);
}

// Mean of the squared j-th column of a gradient matrix, compensated.
inline double mean_square_column(const Matrix& grads, std::size_t j) {
  CompensatedSum s;
  for (std::size_t i = 0; i < grads.rows(); ++i) {
    const double g = grads(i, j);
    s.add(g * g);
  }
  return s.value() / static_cast<double>(grads.rows());
}

inline VariableStatistic make_statistic(std::size_t j, double raw, std::size_t n, double u) {
  return VariableStatistic{j, raw, raw / (u * u), n};
}

inline VariableStatistic empirical_test_statistic(const Network& net, const Matrix& X, std::size_t j,
                                                  const StatConfig& cfg = {}) {
  if (j >= net.input_dim()) {
    throw InputError("variable index " + std::to_string(j) + " out of range for d = " +
                     std::to_string(net.input_dim()));
  }
  if (X.rows() == 0) throw InputError("empirical_test_statistic needs at least one row");
  const double u = normalization_factor(cfg, X.rows());
  const Matrix grads = input_gradient_rows(net, X);
  return make_statistic(j, mean_square_column(grads, j), X.rows(), u);
}

// All d statistics from one gradient pass over the rows.
inline std::vector<VariableStatistic> all_statistics(const Network& net, const Matrix& X,
                                                     const StatConfig& cfg = {}) {
  if (X.rows() == 0) throw InputError("all_statistics needs at least one row");
  const double u = normalization_factor(cfg, X.rows());
  const Matrix grads = input_gradient_rows(net, X);
  std::vector<VariableStatistic> out;
  out.reserve(net.input_dim());
  for (std::size_t j = 0; j < net.input_dim(); ++j) {
    out.push_back(make_statistic(j, mean_square_column(grads, j), X.rows(), u));
  }
  return out;
}

}  // namespace nnsig
