// Command-line front end for the experiment pipeline.
//
//   proflow_cli <stage> --config cfg.json [--stage-seed-override N]
//   proflow_cli run --config cfg.json        (the config's stage list)

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "proflow/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching PDE sampler experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;

  std::vector<CLI::App*> stage_cmds;
  for (const auto& stage : proflow::stage_names()) {
    auto* cmd = app.add_subcommand(stage, "Run the " + stage + " stage");
    cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--stage-seed-override", seed_override, "Use this seed instead of the derived stage seed");
    stage_cmds.push_back(cmd);
  }
  auto* run_cmd = app.add_subcommand("run", "Run every stage listed in the config");
  run_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    const auto cfg = proflow::load_config(config_path);
    if (run_cmd->parsed()) {
      proflow::run_experiment(cfg, std::cerr);
      return 0;
    }
    for (auto* cmd : stage_cmds) {
      if (cmd->parsed()) stage = cmd->get_name();
    }
    proflow::Pipeline pipeline(cfg, std::cerr);
    pipeline.run(stage, seed_override);
  } catch (const proflow::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
