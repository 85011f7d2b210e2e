// Command-line runner for open-set active-learning experiments.
//
//   ebosal run    --config exp.json [--seed N] [--out DIR] [--method M]... [--force]
//   ebosal ablate --config exp.json ...
//   ebosal sweep  --config exp.json ...

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebosal/commands.hpp"
#include "ebosal/config.hpp"

namespace {

struct SharedFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> methods;
  std::vector<std::string> overrides;
  int jobs = 0;
  bool force = false;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config_path, "Experiment config (JSON, comments allowed)");
  cmd->add_option("--seed", f.seed, "Master seed; overrides the config file");
  cmd->add_option("--out", f.out, "Output directory; overrides the config file");
  cmd->add_option("--method", f.methods, "Method to run (repeatable): ebosal, random, entropy, no_ekus, no_ess");
  cmd->add_option("--set", f.overrides, "Config override key.path=value (repeatable)");
  cmd->add_option("--jobs", f.jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", f.force, "Write into a non-empty output directory");
}

ebosal::ExperimentConfig resolve(const SharedFlags& f) {
  std::vector<std::string> overrides = f.overrides;
  if (f.seed) overrides.push_back("seed=" + std::to_string(*f.seed));
  if (!f.out.empty()) overrides.push_back("out=" + nlohmann::json(f.out).dump());
  if (!f.methods.empty()) overrides.push_back("methods=" + nlohmann::json(f.methods).dump());
  if (f.jobs > 0) overrides.push_back("jobs=" + std::to_string(f.jobs));
  std::optional<std::filesystem::path> path;
  if (!f.config_path.empty()) path = f.config_path;
  return ebosal::parse_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-based open-set active learning experiments"};
  app.require_subcommand(1);

  SharedFlags run_flags, ablate_flags, sweep_flags;
  CLI::App* run = app.add_subcommand("run", "Run every configured method and seed");
  CLI::App* ablate = app.add_subcommand("ablate", "Compare ebosal, no_ekus, no_ess, random, entropy");
  CLI::App* sweep = app.add_subcommand("sweep", "Sweep the known/unknown margins");
  add_shared(run, run_flags);
  add_shared(ablate, ablate_flags);
  add_shared(sweep, sweep_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return ebosal::cmd_run(resolve(run_flags), run_flags.force, std::cout);
    if (ablate->parsed()) return ebosal::cmd_ablate(resolve(ablate_flags), ablate_flags.force, std::cout);
    if (sweep->parsed()) return ebosal::cmd_sweep(resolve(sweep_flags), sweep_flags.force, std::cout);
  } catch (const ebosal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ebosal::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ebosal::kExitRunFailed;
  }
  return ebosal::kExitUsage;
}
