#pragma once

#include "smpc/config.hpp"

#include <optional>
#include <string>

namespace smpc {

struct RunOverrides {
  std::optional<std::string> controller;  // name or "all"
  std::optional<std::string> prs_shape;   // symmetric | one-sided | ellipsoidal
  std::optional<long> rollouts;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int threads = 0;         // 0 = auto
  int keep_rollouts = 0;   // rows of rollouts.csv (0 disables the file)
  std::string label = "custom";
  bool quiet = false;
};

/// Runs the experiment for every configured controller and writes
/// summary.json plus per-controller per_step.csv (and rollouts.csv when
/// requested) under the output directory. Single-controller runs also get
/// top-level per_step.csv / rollouts.csv copies. Returns 0 on success.
int run_experiment(const ExperimentConfig& base, const RunOverrides& overrides);

}  // namespace smpc
