#pragma once

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/random.hpp"

namespace nnsig {

// Maps an original covariate column onto [-1, 1]:
//   rescaled = (original - center) / half_range.
// A partial derivative taken in rescaled coordinates equals the original one
// times half_range, so a squared-gradient statistic scales by half_range^2.
struct ColumnTransform {
  double center = 0.0;
  double half_range = 1.0;

  double forward(double original) const noexcept { return (original - center) / half_range; }
  double inverse(double rescaled) const noexcept { return center + half_range * rescaled; }
};

struct Dataset {
  Matrix X;                 // n x d, entries in [-1, 1]
  std::vector<double> y;
  std::vector<std::string> column_names;  // covariate names, then target
  std::optional<std::vector<ColumnTransform>> rescale;
  double m_y = 0.0;         // bound on |y| for generated data, 0 when unknown
  std::string meta;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return X.cols(); }
};

enum class TargetKind { linear, smooth_sin };

// Regression function for synthetic data.
//   linear:     f(x) = sum_k beta_k x_k + intercept
//   smooth_sin: f(x) = sum_k sin(pi * frequency_k * x_k)
// A dead variable (null_variable) has its coefficient or frequency forced to
// zero so that df/dx_j vanishes identically.
struct TargetSpec {
  TargetKind kind = TargetKind::linear;
  std::vector<double> beta;
  double intercept = 0.0;
  std::vector<double> frequency;
  std::optional<std::size_t> dead_index;
  double noise_sigma = 0.0;

  static TargetSpec linear(std::vector<double> beta, double intercept = 0.0, double sigma = 0.0) {
    TargetSpec s;
    s.kind = TargetKind::linear;
    s.beta = std::move(beta);
    s.intercept = intercept;
    s.noise_sigma = sigma;
    return s;
  }
  static TargetSpec smooth_sin(std::vector<double> frequency, double sigma = 0.0) {
    TargetSpec s;
    s.kind = TargetKind::smooth_sin;
    s.frequency = std::move(frequency);
    s.noise_sigma = sigma;
    return s;
  }
  static TargetSpec null_variable(TargetSpec base, std::size_t dead) {
    base.dead_index = dead;
    return base;
  }

  void validate(std::size_t d) const {
    const auto& coeffs = kind == TargetKind::linear ? beta : frequency;
    if (coeffs.size() != d) {
      throw ConfigError(std::string(kind == TargetKind::linear ? "beta" : "frequency") +
                        " has " + std::to_string(coeffs.size()) + " entries but d = " +
                        std::to_string(d));
    }
    if (dead_index && *dead_index >= d) throw ConfigError("dead variable index out of range");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw ConfigError("noise_sigma must be a finite nonnegative number");
    }
  }

  double coefficient(std::size_t k) const {
    if (dead_index && *dead_index == k) return 0.0;
    return kind == TargetKind::linear ? beta[k] : frequency[k];
  }

  double evaluate(std::span<const double> x) const {
    double s = kind == TargetKind::linear ? intercept : 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double c = coefficient(k);
      if (c == 0.0) continue;
      s += kind == TargetKind::linear ? c * x[k] : std::sin(M_PI * c * x[k]);
    }
    return s;
  }

  // sup of |f| over [-1, 1]^d (an upper bound for smooth_sin).
  double sup_abs(std::size_t d) const {
    double s = kind == TargetKind::linear ? std::abs(intercept) : 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double c = coefficient(k);
      if (c == 0.0) continue;
      s += kind == TargetKind::linear ? std::abs(c) : std::min(1.0, std::abs(M_PI * c));
    }
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    os << (kind == TargetKind::linear ? "linear" : "smooth_sin") << " sigma=" << noise_sigma;
    if (dead_index) os << " dead=" << *dead_index;
    return os.str();
  }
};

// Noise is N(0, sigma^2) truncated at +-kNoiseTruncation * sigma.
inline constexpr double kNoiseTruncation = 4.0;

// X ~ Uniform([-1,1]^d), y = f(X) + eps with truncated Gaussian eps.
inline Dataset generate(const TargetSpec& spec, std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n == 0 || d == 0) throw ConfigError("generate needs n >= 1 and d >= 1");
  spec.validate(d);
  RandomStream cov(seed, stream_tag::kCovariates, 0);
  RandomStream noise(seed, stream_tag::kNoise, 0);
  Dataset ds;
  ds.X = Matrix(n, d);
  ds.y.resize(n);
  const double sigma = spec.noise_sigma;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.X.row(i);
    for (double& v : row) v = cov.uniform(-1.0, 1.0);
    const double eps = sigma > 0.0 ? noise.truncated_gaussian(sigma, kNoiseTruncation * sigma) : 0.0;
    ds.y[i] = spec.evaluate(row) + eps;
  }
  for (std::size_t k = 0; k < d; ++k) ds.column_names.push_back("x" + std::to_string(k + 1));
  ds.column_names.push_back("y");
  ds.m_y = spec.sup_abs(d) + kNoiseTruncation * sigma;
  ds.meta = "generated: " + spec.describe() + " noise_truncation=4sigma seed=" + std::to_string(seed);
  return ds;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads a comma-separated file with a header row. Covariate columns are
// rescaled to [-1, 1]; the transforms are kept in Dataset::rescale.
// Row numbers in error messages count data rows from 1 (header excluded).
inline Dataset load_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV file '" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  const auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end()) {
    throw DataError("target column '" + target_column + "' not found in header");
  }
  const std::size_t target = static_cast<std::size_t>(target_it - header.begin());
  const std::size_t ncols = header.size();
  if (ncols < 2) throw DataError("CSV needs at least one covariate column besides the target");

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> missing_rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row_no;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != ncols) {
      throw DataError("row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(ncols));
    }
    std::vector<double> values(ncols);
    bool missing = false;
    for (std::size_t c = 0; c < ncols; ++c) {
      const auto cell = detail::trim(cells[c]);
      if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") {
        missing = true;
        continue;
      }
      const auto v = detail::parse_number(cell);
      if (!v) {
        throw DataError("non-numeric cell '" + cell + "' in column '" + header[c] + "' at row " +
                        std::to_string(row_no));
      }
      values[c] = *v;
    }
    if (missing) {
      missing_rows.push_back(row_no);
      continue;
    }
    rows.push_back(std::move(values));
  }
  if (!missing_rows.empty()) {
    std::string list;
    for (std::size_t k = 0; k < missing_rows.size() && k < 20; ++k) {
      if (k) list += ", ";
      list += std::to_string(missing_rows[k]);
    }
    if (missing_rows.size() > 20) list += ", ...";
    throw DataError("missing values in rows " + list);
  }
  if (rows.empty()) throw DataError("CSV file '" + path + "' has no data rows");

  const std::size_t n = rows.size();
  const std::size_t d = ncols - 1;
  Dataset ds;
  ds.X = Matrix(n, d);
  ds.y.resize(n);
  std::vector<ColumnTransform> transforms;
  std::size_t out_col = 0;
  for (std::size_t c = 0; c < ncols; ++c) {
    if (c == target) continue;
    double lo = rows[0][c], hi = rows[0][c];
    for (const auto& r : rows) {
      lo = std::min(lo, r[c]);
      hi = std::max(hi, r[c]);
    }
    if (!(hi > lo)) throw DataError("covariate column '" + header[c] + "' is constant");
    ColumnTransform t{0.5 * (lo + hi), 0.5 * (hi - lo)};
    for (std::size_t i = 0; i < n; ++i) {
      ds.X(i, out_col) = std::clamp(t.forward(rows[i][c]), -1.0, 1.0);
    }
    transforms.push_back(t);
    ds.column_names.push_back(header[c]);
    ++out_col;
  }
  for (std::size_t i = 0; i < n; ++i) ds.y[i] = rows[i][target];
  ds.column_names.push_back(header[target]);
  ds.rescale = std::move(transforms);
  ds.meta = "csv: " + path;
  return ds;
}

inline Dataset select_rows(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.X = Matrix(idx.size(), ds.dim());
  out.y.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = ds.X.row(idx[k]);
    std::copy(src.begin(), src.end(), out.X.row(k).begin());
    out.y[k] = ds.y[idx[k]];
  }
  out.column_names = ds.column_names;
  out.rescale = ds.rescale;
  out.m_y = ds.m_y;
  out.meta = ds.meta;
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

inline SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RandomStream rng(seed, stream_tag::kSplit, 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (k == 0 || k == n) throw ConfigError("split leaves one side empty");
  SplitIndices s;
  s.first.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  s.second.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  return s;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  const auto s = split_indices(ds.size(), train_fraction, seed);
  return {select_rows(ds, s.first), select_rows(ds, s.second)};
}

// Writes covariates and target with the dataset's column names. Values are
// printed with 17 significant digits so a reload reproduces them exactly.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  std::vector<std::string> names = ds.column_names;
  if (names.size() != ds.dim() + 1) {
    names.clear();
    for (std::size_t k = 0; k < ds.dim(); ++k) names.push_back("x" + std::to_string(k + 1));
    names.push_back("y");
  }
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, p - buf);
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < ds.dim(); ++k) {
      put(ds.X(i, k));
      out << ',';
    }
    put(ds.y[i]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing CSV to '" + path + "'");
}

}  // namespace nnsig
