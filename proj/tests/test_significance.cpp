#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nnsig/data.hpp"
#include "nnsig/nulldist.hpp"
#include "nnsig/significance.hpp"
#include "oracles.hpp"

using namespace nnsig;
using Dims = std::vector<std::size_t>;

namespace {

Network linear_net(const std::vector<double>& beta, double intercept = 0.0) {
  Network net = zero_network(Dims{beta.size(), 1}, Activation::tanh);
  for (std::size_t k = 0; k < beta.size(); ++k) net.weights[0](0, k) = beta[k];
  net.biases[0][0] = intercept;
  return net;
}

Matrix random_X(std::size_t n, std::size_t d, std::uint64_t seed) {
  RandomStream rng(seed);
  Matrix X(n, d);
  for (double& v : X.data()) v = rng.uniform(-1.0, 1.0);
  return X;
}

StatConfig rate_config() {
  StatConfig cfg;
  cfg.normalization_mode = NormalizationMode::rate;
  cfg.rate_constants = RateConstants{10.0, 1.0, 2.0, 1.0};
  return cfg;
}

}  // namespace

TEST(Statistic, LinearNetworkGivesSquaredCoefficients) {
  const Network net = linear_net({2.0, 0.0, 1.0}, 0.7);
  for (std::uint64_t seed : {1u, 2u}) {
    const auto stats = all_statistics(net, random_X(257, 3, seed));
    ASSERT_EQ(stats.size(), 3u);
    EXPECT_NEAR(stats[0].raw, 4.0, 1e-12);
    EXPECT_EQ(stats[1].raw, 0.0);
    EXPECT_NEAR(stats[2].raw, 1.0, 1e-12);
    EXPECT_EQ(stats[0].n_used, 257u);
    EXPECT_EQ(stats[2].variable_index, 2u);
  }
}

TEST(Statistic, DisconnectedInputIsExactlyZero) {
  Network net = init_glorot(Dims{3, 5, 5, 1}, Activation::sigmoid, 4);
  for (std::size_t r = 0; r < 5; ++r) net.weights[0](r, 1) = 0.0;
  const auto s = empirical_test_statistic(net, random_X(100, 3, 1), 1);
  EXPECT_EQ(s.raw, 0.0);
  EXPECT_EQ(s.normalized, 0.0);
}

TEST(Statistic, MatchesFiniteDifferenceOracle) {
  const Network net = init_glorot(Dims{2, 6, 4, 1}, Activation::tanh, 9);
  const Matrix X = random_X(300, 2, 5);
  for (std::size_t j = 0; j < 2; ++j) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < X.rows(); ++i) {
      const std::vector<double> x(X.row(i).begin(), X.row(i).end());
      const double g = oracle::fd_gradient(net, x)[j];
      s += static_cast<long double>(g) * g;
    }
    const double oracle_stat = static_cast<double>(s / X.rows());
    EXPECT_NEAR(empirical_test_statistic(net, X, j).raw, oracle_stat, 1e-8 * std::max(1.0, oracle_stat));
  }
}

TEST(Statistic, AllStatisticsBitwiseEqualsSeparateCalls) {
  for (Activation act : {Activation::relu, Activation::tanh, Activation::sigmoid}) {
    const Network net = init_glorot(Dims{4, 7, 3, 1}, act, 11);
    const Matrix X = random_X(211, 4, 2);
    const auto cfg = rate_config();
    const auto all = all_statistics(net, X, cfg);
    for (std::size_t j = 0; j < 4; ++j) {
      const auto one = empirical_test_statistic(net, X, j, cfg);
      EXPECT_EQ(all[j].raw, one.raw);
      EXPECT_EQ(all[j].normalized, one.normalized);
    }
  }
}

TEST(Statistic, RowPermutationStable) {
  const Network net = init_glorot(Dims{3, 8, 8, 1}, Activation::tanh, 3);
  const Matrix X = random_X(5000, 3, 8);
  std::vector<std::size_t> perm(X.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RandomStream rng(6);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Matrix Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(X.row(perm[i]).begin(), X.row(perm[i]).end(), Y.row(i).begin());
  }
  const auto a = all_statistics(net, X);
  const auto b = all_statistics(net, Y);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a[j].raw, b[j].raw, 1e-12 * std::max(1.0, a[j].raw));
}

TEST(Statistic, NonnegativeAndRejectsBadIndex) {
  const Network net = init_glorot(Dims{2, 3, 1}, Activation::relu, 1);
  const Matrix X = random_X(50, 2, 1);
  for (const auto& s : all_statistics(net, X)) EXPECT_GE(s.raw, 0.0);
  EXPECT_THROW(empirical_test_statistic(net, X, 2), InputError);
  EXPECT_THROW(empirical_test_statistic(net, Matrix(0, 2), 0), InputError);
}

#if defined(__SIZEOF_FLOAT128__)
TEST(Statistic, AgreesWithQuadPrecisionAccumulatorAtOneMillionRows) {
  const std::size_t n = 1000000;
  const Network net = init_glorot(Dims{2, 4, 1}, Activation::tanh, 21);
  const Matrix X = random_X(n, 2, 13);
  const Matrix grads = input_gradient_rows(net, X);
  for (std::size_t j = 0; j < 2; ++j) {
    __float128 acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const __float128 g = grads(i, j);
      acc += g * g;
    }
    const double oracle_stat = static_cast<double>(acc / n);
    EXPECT_NEAR(mean_square_column(grads, j), oracle_stat, 1e-12 * oracle_stat);
  }
}
#endif

TEST(Normalization, IdentityIsOne) {
  for (std::size_t n : {1u, 10u, 1000000u}) EXPECT_EQ(normalization_factor(StatConfig{}, n), 1.0);
}

TEST(Normalization, RateExample) {
  EXPECT_NEAR(normalization_factor(rate_config(), 10000), std::sqrt(0.1) + 0.1, 1e-15);
  EXPECT_NEAR(normalization_factor(rate_config(), 10000), 0.41623, 5e-6);
}

TEST(Normalization, RateDecreasesInN) {
  double prev = 1e300;
  for (std::size_t n : {10u, 100u, 1000u, 10000u, 100000u}) {
    const double u = normalization_factor(rate_config(), n);
    EXPECT_LT(u, prev);
    prev = u;
  }
}

TEST(Normalization, NormalizedIsRawOverUSquared) {
  const Network net = linear_net({3.0});
  const auto s = empirical_test_statistic(net, random_X(10000, 1, 2), 0, rate_config());
  const double u = std::sqrt(0.1) + 0.1;
  EXPECT_NEAR(s.normalized, 9.0 / (u * u), 1e-10);
}

TEST(Normalization, RateModeNeedsConstants) {
  StatConfig cfg;
  cfg.normalization_mode = NormalizationMode::rate;
  EXPECT_THROW(normalization_factor(cfg, 10), ConfigError);
  EXPECT_THROW(parse_normalization("sqrt"), ConfigError);
  EXPECT_EQ(parse_normalization("rate"), NormalizationMode::rate);
}

TEST(Normalization, PValuesInvariantToMode) {
  const auto ds = generate(TargetSpec::linear({1.0, 0.5, 0.0}, 0.0, 0.1), 400, 3, 5);
  TrainConfig tc;
  tc.seed = 2;
  tc.epochs = 30;
  const auto fm = fit_least_squares(ds, ArchSpec::uniform(2, 4, Activation::sigmoid), tc);
  NullConfig nc;
  nc.m = 30;
  nc.n_p = 200;
  nc.seed = 17;
  const std::vector<std::size_t> vars{0, 1, 2};
  const auto a = significance_tests(fm, ds, vars, nc);
  StatConfig rate;
  rate.normalization_mode = NormalizationMode::rate;
  rate.rate_constants = RateConstants{4.0, 0.25, 2.0, 0.5};
  const auto b = significance_tests(fm, ds, vars, nc, rate);
  for (std::size_t k = 0; k < vars.size(); ++k) {
    EXPECT_EQ(a[k].p_value, b[k].p_value);
    EXPECT_NE(a[k].observed.normalized, b[k].observed.normalized);
  }
}
