#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "nnsig/data.hpp"
#include "nnsig/significance.hpp"
#include "nnsig/training.hpp"

using namespace nnsig;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = (std::filesystem::temp_directory_path() / ("nnsig_data_" + name)).string();
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Generate, NoiselessLinearReproducesFirstCovariate) {
  const auto ds = generate(TargetSpec::linear({1.0, 0.0}), 200, 2, 1);
  ASSERT_EQ(ds.size(), 200u);
  ASSERT_EQ(ds.dim(), 2u);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.y[i], ds.X(i, 0));
  EXPECT_EQ(ds.column_names, (std::vector<std::string>{"x1", "x2", "y"}));
}

TEST(Generate, CovariatesInCubeAndResponseBounded) {
  auto spec = TargetSpec::linear({0.5, -2.0, 1.0}, 0.3, 0.2);
  const auto ds = generate(spec, 5000, 3, 7);
  for (double v : ds.X.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_DOUBLE_EQ(ds.m_y, 0.3 + 3.5 + 0.8);
  for (double y : ds.y) EXPECT_LE(std::abs(y), ds.m_y);
}

TEST(Generate, NoiseMeanWithinCltBound) {
  const double sigma = 0.5;
  const std::size_t n = 20000;
  auto spec = TargetSpec::linear({1.0, 2.0}, 0.0, sigma);
  const auto ds = generate(spec, n, 2, 11);
  double s = 0.0;
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double eps = ds.y[i] - spec.evaluate(ds.X.row(i));
    s += eps;
    mx = std::max(mx, std::abs(eps));
  }
  EXPECT_LT(std::abs(s / n), 4 * sigma / std::sqrt(static_cast<double>(n)));
  EXPECT_LE(mx, 4 * sigma);
}

TEST(Generate, DeadVariableDoesNotAffectResponse) {
  auto spec = TargetSpec::null_variable(TargetSpec::linear({1.0, 3.0, -1.0}), 1);
  const auto ds = generate(spec, 100, 3, 3);
  // Replacing column 1 by a permutation of itself leaves f unchanged.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<double> x(ds.X.row(i).begin(), ds.X.row(i).end());
    const double before = spec.evaluate(x);
    x[1] = ds.X((i * 37 + 5) % ds.size(), 1);
    EXPECT_EQ(spec.evaluate(x), before);
    EXPECT_EQ(ds.y[i], before);
  }
  auto sin_spec = TargetSpec::null_variable(TargetSpec::smooth_sin({1.0, 2.0}), 0);
  std::vector<double> a{0.3, 0.4}, b{-0.9, 0.4};
  EXPECT_EQ(sin_spec.evaluate(a), sin_spec.evaluate(b));
}

TEST(Generate, IsDeterministicAndValidatesBeta) {
  auto spec = TargetSpec::linear({1.0, 2.0}, 0.0, 0.1);
  const auto a = generate(spec, 50, 2, 5);
  const auto b = generate(spec, 50, 2, 5);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_THROW(generate(spec, 50, 3, 5), ConfigError);
  EXPECT_THROW(generate(TargetSpec::null_variable(spec, 2), 50, 2, 5), ConfigError);
}

TEST(LoadCsv, RescalesColumnsToUnitCube) {
  const auto path = write_temp("rescale.csv", "a,b,y\n0,1,3\n10,2,4\n5,3,5\n");
  const auto ds = load_csv(path, "y");
  ASSERT_EQ(ds.size(), 3u);
  ASSERT_EQ(ds.dim(), 2u);
  EXPECT_DOUBLE_EQ(ds.X(2, 0), 0.0);
  EXPECT_DOUBLE_EQ(ds.X(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(ds.X(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(ds.X(1, 1), 0.0);
  EXPECT_EQ(ds.y, (std::vector<double>{3, 4, 5}));
  ASSERT_TRUE(ds.rescale.has_value());
  EXPECT_DOUBLE_EQ((*ds.rescale)[0].center, 5.0);
  EXPECT_DOUBLE_EQ((*ds.rescale)[0].half_range, 5.0);
  EXPECT_EQ(ds.column_names, (std::vector<std::string>{"a", "b", "y"}));
}

TEST(LoadCsv, TargetColumnMayBeAnywhere) {
  const auto path = write_temp("target_first.csv", "resp,u\n1.5,-2\n2.5,2\n");
  const auto ds = load_csv(path, "resp");
  EXPECT_EQ(ds.y, (std::vector<double>{1.5, 2.5}));
  EXPECT_DOUBLE_EQ(ds.X(0, 0), -1.0);
}

TEST(LoadCsv, InverseTransformRoundTrips) {
  std::string content = "p,q,y\n";
  RandomStream rng(3);
  std::vector<std::vector<double>> orig;
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(-1e3, 5e3), q = rng.uniform(0.001, 0.002);
    orig.push_back({p, q});
    char line[128];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%d\n", p, q, i);
    content += line;
  }
  const auto ds = load_csv(write_temp("roundtrip.csv", content), "y");
  for (std::size_t i = 0; i < orig.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double back = (*ds.rescale)[k].inverse(ds.X(i, k));
      EXPECT_LE(std::abs(back - orig[i][k]), 1e-12 * std::max(1.0, std::abs(orig[i][k])));
      EXPECT_LE(std::abs(ds.X(i, k)), 1.0);
    }
  }
}

TEST(LoadCsv, NonNumericCellCitesRow) {
  std::string content = "x1,x2,y\n";
  for (int r = 1; r <= 10; ++r) content += (r == 7 ? "0.5,abc,1\n" : "0.1,0.2," + std::to_string(r) + "\n");
  try {
    load_csv(write_temp("bad.csv", content), "y");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("x2"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, MissingTargetColumn) {
  EXPECT_THROW(load_csv(write_temp("notarget.csv", "a,b\n1,2\n3,4\n"), "y"), DataError);
}

TEST(LoadCsv, ConstantColumnIsNamed) {
  try {
    load_csv(write_temp("const.csv", "a,flat,y\n1,5,0\n2,5,1\n3,5,2\n"), "y");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
  }
}

TEST(LoadCsv, MissingValuesRejectedWithRowNumbers) {
  try {
    load_csv(write_temp("missing.csv", "a,b,y\n1,2,3\n4,,6\n7,8,9\n1,2,\n"), "y");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2, 4"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, RoundTripsWrittenDataset) {
  const auto ds = generate(TargetSpec::linear({1.0, -1.0}, 0.0, 0.1), 64, 2, 9);
  const auto path = (std::filesystem::temp_directory_path() / "nnsig_data_written.csv").string();
  write_csv(ds, path);
  const auto back = load_csv(path, "y");
  EXPECT_EQ(back.y, ds.y);
}

TEST(Split, SizesAndPartition) {
  const auto ds = generate(TargetSpec::linear({1.0}), 100, 1, 2);
  const auto s = split_indices(100, 0.5, 8);
  EXPECT_EQ(s.first.size(), 50u);
  EXPECT_EQ(s.second.size(), 50u);
  std::set<std::size_t> all(s.first.begin(), s.first.end());
  for (std::size_t i : s.second) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(*all.rbegin(), 99u);

  const auto again = split_indices(100, 0.5, 8);
  EXPECT_EQ(again.first, s.first);

  auto [a, b] = split(ds, 0.5, 8);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(a.y[0], ds.y[s.first[0]]);
  EXPECT_EQ(b.y[0], ds.y[s.second[0]]);
}

TEST(Split, CarriesTransforms) {
  const auto ds = load_csv(write_temp("split.csv", "a,y\n0,1\n2,2\n4,3\n6,4\n"), "y");
  auto [a, b] = split(ds, 0.5, 1);
  ASSERT_TRUE(a.rescale && b.rescale);
  EXPECT_DOUBLE_EQ((*a.rescale)[0].half_range, 3.0);
}

TEST(Split, RejectsBadFraction) {
  EXPECT_THROW(split_indices(10, 0.0, 1), ConfigError);
  EXPECT_THROW(split_indices(10, 1.0, 1), ConfigError);
  EXPECT_THROW(split_indices(10, -0.5, 1), ConfigError);
}

TEST(Rescaling, StatisticScalesByHalfRangeSquared) {
  // y = 3 u on u in [10, 30]: in rescaled coordinates u = 20 + 10 x, so
  // y = 60 + 30 x and the statistic becomes 30^2 = 3^2 * 10^2.
  std::string content = "u,y\n";
  RandomStream rng(4);
  for (int i = 0; i < 300; ++i) {
    const double u = i == 0 ? 10.0 : (i == 1 ? 30.0 : rng.uniform(10, 30));
    char line[96];
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", u, 3.0 * u);
    content += line;
  }
  const auto ds = load_csv(write_temp("chain.csv", content), "y");
  const double half = (*ds.rescale)[0].half_range;
  ASSERT_DOUBLE_EQ(half, 10.0);
  // The affine fit in rescaled coordinates, expressed as a linear network.
  const std::vector<std::size_t> dims{1, 1};
  Network net = zero_network(dims, Activation::tanh);
  net.weights[0](0, 0) = 3.0 * half;
  net.biases[0][0] = 3.0 * (*ds.rescale)[0].center;
  EXPECT_NEAR(quadratic_loss(net, ds.X, ds.y), 0.0, 1e-20);
  const double original_stat = 3.0 * 3.0;
  EXPECT_DOUBLE_EQ(empirical_test_statistic(net, ds.X, 0).raw, original_stat * half * half);
}
