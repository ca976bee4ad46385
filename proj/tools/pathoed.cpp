// pathoed: experiment runner.
//
//   pathoed <forward|invert|optimize|baseline|goal-density> --config FILE
//           [--out DIR] [--design FILE] [--data FILE]
//
// Prints a JSON summary on stdout. Failures print {"error": {...}} on stderr
// and exit with 2 (configuration) or 1 (anything else).

#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "pathoed/commands.hpp"

namespace {

int fail(const std::string& kind, const std::string& key, const std::string& message, int code) {
  pathoed::Json e{{"kind", kind}, {"message", message}};
  if (!key.empty()) e["key"] = key;
  std::cerr << pathoed::Json{{"error", e}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using Command = std::function<pathoed::Json(const pathoed::ExperimentConfig&, const pathoed::CommandOptions&)>;
  const std::map<std::string, std::pair<Command, std::string>> commands = {
      {"forward", {pathoed::cmd_forward, "Simulate the truth and record measurements along the configured path"}},
      {"invert", {pathoed::cmd_invert, "MAP point, pointwise variance and posterior samples"}},
      {"optimize", {pathoed::cmd_optimize, "Multi-start design optimization of the criterion"}},
      {"baseline", {pathoed::cmd_baseline, "Criterion values of uniform random designs"}},
      {"goal-density", {pathoed::cmd_goal_density, "Prior and posterior goal densities"}},
  };

  CLI::App app{"Optimal sensor paths for a linear advection-diffusion inverse problem"};
  app.require_subcommand(1);
  std::string config_file;
  pathoed::CommandOptions opts;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config,-c", config_file, "Experiment configuration (JSON)")->required();
    sub->add_option("--out,-o", opts.out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--design", opts.design_file, "Design vector: optimize.json or one value per line");
    sub->add_option("--data", opts.data_file, "Measurements CSV with a 'value' column");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", "", e.what(), 2);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const pathoed::ExperimentConfig cfg = pathoed::load_config(config_file);
    const pathoed::Json summary = commands.at(name).first(cfg, opts);
    std::cout << summary.dump(2) << std::endl;
  } catch (const pathoed::ConfigError& e) {
    return fail("config", e.key(), e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", "", e.what(), 1);
  }
  return 0;
}
