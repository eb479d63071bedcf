#pragma once

// Command layer behind the `nnsig` executable: config parsing, the four
// workflows (generate, train, test, diagnose) and JSON reports. Requires
// nlohmann/json.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nnsig/nnsig.hpp"

namespace nnsig::app {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

struct CommandResult {
  json report;
  std::vector<std::string> files_written;
};

namespace detail {

inline const json& section(const json& cfg, const char* name) {
  if (!cfg.contains(name) || !cfg.at(name).is_object()) {
    throw ConfigError(std::string("missing config section '") + name + "'");
  }
  return cfg.at(name);
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline std::string sibling(const std::string& primary, const std::string& suffix) {
  std::filesystem::path p(primary);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// Parsed view of the run configuration (see docs/config.md).
struct RunConfig {
  json raw;
  std::uint64_t seed = 0;

  static RunConfig from_json(json cfg, const Overrides& ov = {}) {
    if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig rc;
    if (ov.seed) cfg["seed"] = *ov.seed;
    rc.seed = detail::get_or<std::uint64_t>(cfg, "seed", 0);
    cfg["seed"] = rc.seed;
    rc.raw = std::move(cfg);
    return rc;
  }

  static RunConfig from_file(const std::string& path, const Overrides& ov = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json cfg;
    try {
      in >> cfg;
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(std::move(cfg), ov);
  }

  std::string output(const char* key, const char* fallback) const {
    if (raw.contains("output") && raw.at("output").is_object()) {
      return detail::get_or<std::string>(raw.at("output"), key, fallback);
    }
    return fallback;
  }
};

inline TargetSpec parse_generator(const json& g, std::size_t d) {
  const auto kind = detail::get_or<std::string>(g, "kind", "linear");
  TargetSpec spec;
  if (kind == "linear") {
    spec = TargetSpec::linear(detail::get_or<std::vector<double>>(g, "beta", {}),
                              detail::get_or<double>(g, "intercept", 0.0));
  } else if (kind == "smooth_sin") {
    spec = TargetSpec::smooth_sin(detail::get_or<std::vector<double>>(g, "frequency", {}));
  } else {
    throw ConfigError("unknown generator kind '" + kind + "'");
  }
  spec.noise_sigma = detail::get_or<double>(g, "noise_sigma", 0.0);
  if (g.contains("dead_index") && !g.at("dead_index").is_null()) {
    spec = TargetSpec::null_variable(spec, detail::get_or<std::size_t>(g, "dead_index", 0));
  }
  spec.validate(d);
  return spec;
}

inline Dataset load_data(const RunConfig& rc) {
  const json& data = detail::section(rc.raw, "data");
  const bool has_path = data.contains("path");
  const bool has_gen = data.contains("generator");
  if (has_path == has_gen) throw ConfigError("data section needs exactly one of 'path' or 'generator'");
  if (has_path) {
    return load_csv(detail::get_or<std::string>(data, "path", ""), detail::get_or<std::string>(data, "target", "y"));
  }
  const json& g = data.at("generator");
  const auto n = detail::get_or<std::size_t>(g, "n", 0);
  const auto d = detail::get_or<std::size_t>(g, "d", 0);
  if (n == 0 || d == 0) throw ConfigError("data.generator needs positive 'n' and 'd'");
  return generate(parse_generator(g, d), n, d, rc.seed);
}

inline TrainConfig parse_training(const RunConfig& rc) {
  TrainConfig tc;
  tc.seed = rc.seed;
  if (!rc.raw.contains("training")) return tc;
  const json& t = rc.raw.at("training");
  tc.epochs = detail::get_or(t, "epochs", tc.epochs);
  tc.batch_size = detail::get_or(t, "batch_size", tc.batch_size);
  tc.learning_rate = detail::get_or(t, "learning_rate", tc.learning_rate);
  tc.lr_decay = detail::get_or(t, "lr_decay", tc.lr_decay);
  tc.tolerance = detail::get_or(t, "tolerance", tc.tolerance);
  tc.max_grad_norm = detail::get_or(t, "max_grad_norm", tc.max_grad_norm);
  tc.momentum = detail::get_or(t, "momentum", tc.momentum);
  tc.moment_bound = detail::get_or(t, "moment_bound", tc.moment_bound);
  tc.validate();
  return tc;
}

struct ResolvedArch {
  ArchSpec spec;
  std::size_t width = 0;
  bool auto_width = false;
};

inline ResolvedArch parse_architecture(const RunConfig& rc, std::size_t n) {
  ResolvedArch ra;
  json a = rc.raw.contains("architecture") ? rc.raw.at("architecture") : json::object();
  const auto depth = detail::get_or<std::size_t>(a, "depth", 2);
  const auto act = parse_activation(detail::get_or<std::string>(a, "activation", "sigmoid"));
  if (!a.contains("width") || (a.at("width").is_string() && a.at("width").get<std::string>() == "auto")) {
    ra.auto_width = true;
    ra.width = width_schedule(n, depth, lipschitz_constant(act), detail::get_or<double>(a, "width_constant", 1.0),
                              detail::get_or<double>(a, "width_exponent", 0.25));
  } else {
    ra.width = detail::get_or<std::size_t>(a, "width", 0);
    if (ra.width == 0) throw ConfigError("architecture.width must be positive or \"auto\"");
  }
  ra.spec = ArchSpec::uniform(depth, ra.width, act);
  return ra;
}

inline NullConfig parse_null(const RunConfig& rc) {
  NullConfig nc;
  nc.seed = rc.seed;
  if (!rc.raw.contains("test")) return nc;
  const json& t = rc.raw.at("test");
  nc.m = detail::get_or(t, "m", nc.m);
  nc.n_p = detail::get_or(t, "n_p", nc.n_p);
  nc.lambda_shrink = detail::get_or(t, "lambda_shrink", nc.lambda_shrink);
  nc.alpha_adapt = detail::get_or(t, "alpha_adapt", nc.alpha_adapt);
  nc.m_max = detail::get_or(t, "m_max", nc.m_max);
  nc.adapt_tol = detail::get_or(t, "adapt_tol", nc.adapt_tol);
  nc.sigma_scale = parse_sigma_scale(detail::get_or<std::string>(t, "sigma_scale", "raw"));
  nc.threads = detail::get_or(t, "threads", nc.threads);
  nc.validate();
  return nc;
}

inline StatConfig parse_stat(const RunConfig& rc, const Network& net) {
  StatConfig sc;
  if (!rc.raw.contains("test")) return sc;
  const json& t = rc.raw.at("test");
  sc.normalization_mode = parse_normalization(detail::get_or<std::string>(t, "normalization", "identity"));
  if (sc.normalization_mode == NormalizationMode::rate) {
    if (!t.contains("s_over_d")) throw ConfigError("rate normalization requires test.s_over_d");
    sc.rate_constants = RateConstants{static_cast<double>(net.max_width()), lipschitz_constant(net.activation),
                                      static_cast<double>(net.depth()), detail::get_or<double>(t, "s_over_d", 0.0)};
  }
  return sc;
}

inline json to_json(const MomentCertificate& c) {
  return {{"second_moment", c.second_moment}, {"bound_m", c.bound_m}, {"satisfied", c.satisfied}};
}

inline json to_json(const VariableStatistic& s) {
  return {{"variable_index", s.variable_index}, {"raw", s.raw}, {"normalized", s.normalized}, {"n_used", s.n_used}};
}

inline json to_json(const NullConfig& c) {
  return {{"m", c.m},
          {"n_p", c.n_p},
          {"lambda_shrink", c.lambda_shrink},
          {"alpha_adapt", c.alpha_adapt},
          {"m_max", c.effective_m_max()},
          {"adapt_tol", c.adapt_tol},
          {"sigma_scale", std::string(to_string(c.sigma_scale))},
          {"seed", c.seed}};
}

inline json to_json(const TestResult& r, bool embed_null_samples = true) {
  json j = {{"variable_index", r.variable_index},
            {"observed", to_json(r.observed)},
            {"p_value", r.p_value},
            {"m_final", r.m_final},
            {"seed", r.seed},
            {"config", to_json(r.config)},
            {"normalization", std::string(to_string(r.stat_config.normalization_mode))},
            {"version", std::string(kVersion)},
            {"timestamp", detail::iso_timestamp()}};
  if (embed_null_samples) j["null_samples"] = r.null_samples;
  return j;
}

inline json to_json(const RateReport& r) {
  return {{"x_values", r.x_values},
          {"errors", r.errors},
          {"log_log_slope", r.log_log_slope},
          {"slope_stderr", r.slope_stderr},
          {"warnings", r.warnings}};
}

inline json flags_json(const NullConfig* nc, const StatConfig* sc) {
  json f = {{"glorot_truncation", "+-2 sigma_g (resampling)"}, {"noise_truncation", "+-4 sigma"}};
  if (nc) f["sigma_scale"] = std::string(to_string(nc->sigma_scale));
  if (sc) f["normalization"] = std::string(to_string(sc->normalization_mode));
  return f;
}

inline json model_summary(const FittedModel& fm, bool auto_width) {
  return {{"width", fm.width_used},
          {"width_auto", auto_width},
          {"depth", fm.net.depth()},
          {"activation", std::string(to_string(fm.net.activation))},
          {"layer_dims", fm.net.layer_dims},
          {"final_risk", fm.final_empirical_risk},
          {"epochs_run", fm.train_loss_history.size()},
          {"moment", to_json(fm.moment)}};
}

inline json base_report(const RunConfig& rc, const char* command) {
  return {{"command", command},
          {"version", std::string(kVersion)},
          {"timestamp", detail::iso_timestamp()},
          {"seed", rc.seed},
          {"config", rc.raw}};
}

// generate: write the synthetic dataset described by data.generator.
inline CommandResult cmd_generate(const RunConfig& rc, const Overrides& ov = {}) {
  const json& data = detail::section(rc.raw, "data");
  if (!data.contains("generator")) throw ConfigError("missing config section 'data.generator'");
  const Dataset ds = load_data(rc);
  const std::string path = ov.out.value_or(rc.output("dataset", "data.csv"));
  write_csv(ds, path);
  CommandResult res;
  res.report = base_report(rc, "generate");
  res.report["dataset"] = {{"path", path}, {"n", ds.size()}, {"d", ds.dim()}, {"m_y", ds.m_y}, {"meta", ds.meta}};
  res.files_written.push_back(path);
  return res;
}

struct TrainOutcome {
  Dataset data;
  FittedModel fitted;
  ResolvedArch arch;
};

inline TrainOutcome train_from_config(const RunConfig& rc) {
  TrainOutcome t{load_data(rc), {}, {}};
  t.arch = parse_architecture(rc, t.data.size());
  t.fitted = fit_least_squares(t.data, t.arch.spec, parse_training(rc));
  return t;
}

// train: fit the least-squares network, save it and a JSON summary.
inline CommandResult cmd_train(const RunConfig& rc, const Overrides& ov = {}) {
  detail::Stopwatch clock;
  const TrainOutcome t = train_from_config(rc);
  const std::string model_path = ov.out.value_or(rc.output("model", "model.nnsig"));
  save(t.fitted.net, model_path);
  CommandResult res;
  res.report = base_report(rc, "train");
  res.report["model"] = model_summary(t.fitted, t.arch.auto_width);
  res.report["model"]["path"] = model_path;
  res.report["flags"] = flags_json(nullptr, nullptr);
  res.report["timings"] = {{"train_seconds", clock.seconds()}};
  const std::string loss_path = rc.output("loss_csv", detail::sibling(model_path, "_loss.csv").c_str());
  write_loss_history_csv(t.fitted, loss_path);
  const std::string summary_path = rc.output("summary", detail::sibling(model_path, "_summary.json").c_str());
  detail::write_json(res.report, summary_path);
  res.files_written = {model_path, loss_path, summary_path};
  return res;
}

inline std::vector<std::size_t> parse_variables(const RunConfig& rc, std::size_t d) {
  std::vector<std::size_t> vars;
  if (rc.raw.contains("test") && rc.raw.at("test").contains("variables")) {
    vars = detail::get_or<std::vector<std::size_t>>(rc.raw.at("test"), "variables", {});
  } else {
    for (std::size_t j = 0; j < d; ++j) vars.push_back(j);
  }
  for (std::size_t j : vars) {
    if (j >= d) throw ConfigError("test.variables index " + std::to_string(j) + " out of range for d = " + std::to_string(d));
  }
  return vars;
}

// test: fit (or load) the model, then run the significance test for every
// requested variable against one shared null model.
inline CommandResult cmd_test(const RunConfig& rc, const Overrides& ov = {}) {
  detail::Stopwatch clock;
  Dataset data = load_data(rc);
  FittedModel fitted;
  bool auto_width = false;
  const json test = rc.raw.contains("test") ? rc.raw.at("test") : json::object();
  if (test.contains("model")) {
    fitted.net = load(detail::get_or<std::string>(test, "model", ""));
    if (fitted.net.input_dim() != data.dim()) throw DataError("model input dimension does not match the data");
    fitted.final_empirical_risk = quadratic_loss(fitted.net, data.X, data.y);
    fitted.width_used = fitted.net.max_width();
    fitted.moment = second_moment(fitted.net, data.X, parse_training(rc).moment_bound);
  } else {
    const auto arch = parse_architecture(rc, data.size());
    auto_width = arch.auto_width;
    fitted = fit_least_squares(data, arch.spec, parse_training(rc));
  }
  const double train_seconds = clock.seconds();
  const auto vars = parse_variables(rc, data.dim());
  const NullConfig nc = parse_null(rc);
  const StatConfig sc = parse_stat(rc, fitted.net);
  const bool embed = detail::get_or<bool>(test, "embed_null_samples", true);
  const auto results = significance_tests(fitted, data, vars, nc, sc);

  CommandResult res;
  res.report = base_report(rc, "test");
  res.report["flags"] = flags_json(&nc, &sc);
  res.report["model"] = model_summary(fitted, auto_width);
  res.report["results"] = json::array();
  for (const auto& r : results) res.report["results"].push_back(to_json(r, embed));
  res.report["timings"] = {{"fit_seconds", train_seconds}, {"total_seconds", clock.seconds()}};

  const std::string report_path = ov.out.value_or(rc.output("report", "report.json"));
  detail::write_json(res.report, report_path);
  res.files_written.push_back(report_path);
  if (rc.raw.contains("output") && rc.raw.at("output").contains("null_csv")) {
    const std::string csv = rc.output("null_csv", "");
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + csv + "' for writing");
    out << "replication";
    for (const auto& r : results) out << ",x" << r.variable_index + 1;
    out << '\n';
    out.precision(17);
    for (std::size_t k = 0; k < nc.n_p; ++k) {
      out << k;
      for (const auto& r : results) out << ',' << r.null_samples[k];
      out << '\n';
    }
    res.files_written.push_back(csv);
  }
  return res;
}

// diagnose: Rademacher scaling and approximation-rate experiments. Sections
// that are missing or have "enabled": false are skipped.
inline CommandResult cmd_diagnose(const RunConfig& rc, const Overrides& ov = {}) {
  detail::Stopwatch clock;
  const json diag = rc.raw.contains("diagnostics") ? rc.raw.at("diagnostics") : json::object();
  const auto threads = detail::get_or<std::size_t>(diag, "threads", 1);
  const std::string report_path = ov.out.value_or(rc.output("diagnostics", "diagnostics.json"));
  CommandResult res;
  res.report = base_report(rc, "diagnose");
  res.report["flags"] = flags_json(nullptr, nullptr);
  json timings = json::object();

  auto enabled = [&](const char* name) {
    return diag.contains(name) && diag.at(name).is_object() && detail::get_or<bool>(diag.at(name), "enabled", true);
  };

  if (enabled("complexity")) {
    detail::Stopwatch t;
    const json& c = diag.at("complexity");
    const auto d = detail::get_or<std::size_t>(c, "d", 3);
    const auto arch = ArchSpec::uniform(detail::get_or<std::size_t>(c, "depth", 2),
                                        detail::get_or<std::size_t>(c, "width", 8),
                                        parse_activation(detail::get_or<std::string>(c, "activation", "tanh")));
    const auto n_list = detail::get_or<std::vector<std::size_t>>(c, "n_list", {250, 1000, 4000});
    ComplexityExperiment exp;
    exp.n_eps = detail::get_or(c, "n_eps", exp.n_eps);
    exp.n_class = detail::get_or(c, "n_class", exp.n_class);
    std::vector<RademacherEstimate> ests;
    const auto rep = complexity_scaling_experiment(arch, d, n_list, exp, rc.seed, threads, &ests);
    json j = to_json(rep);
    j["estimates"] = json::array();
    for (const auto& e : ests) {
      j["estimates"].push_back({{"n", e.n}, {"value", e.value}, {"std_error", e.std_error},
                                {"n_eps", e.n_eps}, {"n_class", e.n_class},
                                {"localization_radius", localization_radius(static_cast<double>(arch.hidden.front()),
                                                                             lipschitz_constant(arch.activation),
                                                                             static_cast<double>(arch.hidden.size()), e.n)}});
    }
    const std::string csv = detail::sibling(report_path, "_complexity.csv");
    write_rate_csv(rep, csv, "n");
    j["csv"] = csv;
    res.report["complexity"] = j;
    res.files_written.push_back(csv);
    timings["complexity_seconds"] = t.seconds();
  }

  if (enabled("approximation")) {
    detail::Stopwatch t;
    const json& a = diag.at("approximation");
    const auto d = detail::get_or<std::size_t>(a, "d", 2);
    std::vector<double> freq = detail::get_or<std::vector<double>>(a, "frequency", {});
    if (freq.empty()) {
      freq.assign(d, 0.0);
      freq[0] = 1.0;
    }
    const TargetSpec target = TargetSpec::smooth_sin(freq, detail::get_or<double>(a, "noise_sigma", 0.0));
    target.validate(d);
    const auto widths = detail::get_or<std::vector<std::size_t>>(a, "widths", {4, 8, 16, 32});
    TrainConfig tc = parse_training(rc);
    tc.epochs = detail::get_or<std::size_t>(a, "epochs", 600);
    tc.lr_decay = detail::get_or(a, "lr_decay", 0.98);
    ApproximationExperiment exp;
    exp.depth = detail::get_or(a, "depth", exp.depth);
    exp.activation = parse_activation(detail::get_or<std::string>(a, "activation", "tanh"));
    const auto rep = approximation_rate_experiment(target, widths, detail::get_or<std::size_t>(a, "n", 4000), d, tc,
                                                   rc.seed, exp, threads);
    json j = to_json(rep);
    const std::string csv = detail::sibling(report_path, "_approximation.csv");
    write_rate_csv(rep, csv, "width");
    j["csv"] = csv;
    res.report["approximation"] = j;
    res.files_written.push_back(csv);
    timings["approximation_seconds"] = t.seconds();
  }

  timings["total_seconds"] = clock.seconds();
  res.report["timings"] = timings;
  detail::write_json(res.report, report_path);
  res.files_written.insert(res.files_written.begin(), report_path);
  return res;
}

// Maps library exceptions to process exit codes.
template <class Fn>
int run_guarded(Fn&& fn, std::ostream& err) {
  try {
    fn();
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace nnsig::app
