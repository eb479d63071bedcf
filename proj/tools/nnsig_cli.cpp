#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nnsig/app.hpp"

int main(int argc, char** argv) {
  using namespace nnsig::app;

  CLI::App cli{"Neural-network variable significance testing"};
  cli.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--out", out, "override the primary output path");
  };

  auto* gen = cli.add_subcommand("generate", "write a synthetic dataset as CSV");
  auto* train = cli.add_subcommand("train", "fit the least-squares network and save it");
  auto* test = cli.add_subcommand("test", "run significance tests and write a JSON report");
  auto* diag = cli.add_subcommand("diagnose", "Rademacher and approximation-rate experiments");
  for (auto* sub : {gen, train, test, diag}) add_common(sub);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  const Overrides ov{seed, out};
  return run_guarded(
      [&] {
        const RunConfig rc = RunConfig::from_file(config_path, ov);
        CommandResult res;
        if (gen->parsed()) res = cmd_generate(rc, ov);
        else if (train->parsed()) res = cmd_train(rc, ov);
        else if (test->parsed()) res = cmd_test(rc, ov);
        else res = cmd_diagnose(rc, ov);
        for (const auto& f : res.files_written) std::cout << "wrote " << f << '\n';
      },
      std::cerr);
}
