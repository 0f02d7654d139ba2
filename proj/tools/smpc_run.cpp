#include "smpc/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Stochastic MPC experiment runner"};

  std::string config_path, preset_name;
  smpc::RunOverrides ov;
  std::string controller, prs_shape, out_dir;
  long rollouts = -1;
  long long seed = -1;

  auto* cfg_opt = app.add_option("--config", config_path, "experiment config (JSON)");
  auto* preset_opt =
      app.add_option("--preset", preset_name, "built-in experiment: table1 | appendixB");
  cfg_opt->excludes(preset_opt);
  app.add_option("--controller", controller,
                 "proposed | case-min | case-reset | indirect | nominal | fixed-gain | lqr | all");
  app.add_option("--prs", prs_shape, "PRS shape: symmetric | one-sided | ellipsoidal");
  app.add_option("--rollouts", rollouts, "Monte Carlo rollouts");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", ov.threads, "worker threads (0 = auto)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--keep-rollouts", ov.keep_rollouts,
                 "write the first N rollouts to rollouts.csv");
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (config_path.empty() == preset_name.empty()) {
      std::cerr << "exactly one of --config or --preset is required\n";
      return 2;
    }
    smpc::ExperimentConfig cfg =
        preset_name.empty() ? smpc::load_config(config_path) : smpc::preset(preset_name);
    ov.label = preset_name.empty() ? "custom" : preset_name;
    ov.quiet = quiet;
    if (!controller.empty()) ov.controller = controller;
    if (!prs_shape.empty()) ov.prs_shape = prs_shape;
    if (rollouts >= 0) ov.rollouts = rollouts;
    if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) ov.out_dir = out_dir;
    return smpc::run_experiment(cfg, ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
