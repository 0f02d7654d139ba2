#pragma once

#include "smpc/sim.hpp"
#include "smpc/smpc.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace smpc {

/// Typed mirror of the JSON experiment document. The controller variant is
/// kept as its config string so that "all" (run the whole comparison table)
/// survives a round trip.
struct ExperimentConfig {
  LtiSystem system;
  QuadraticStageCost cost;
  Polytope constraint_set;  // rows over (x, u)
  double level = 0.0;
  RiskAllocation allocation = RiskAllocation::Joint;
  VectorXd row_levels;
  std::string variant = "proposed";
  MatrixXd K;
  MatrixXd K_lqr;
  int N = 1;
  double lambda_penalty = 0.0;
  PrsSpec prs;
  std::string terminal_type = "origin";  // or "halfspace-from-tightening"
  MatrixXd Kf;
  int T = 1;
  long rollouts = 1;
  std::uint64_t seed = 0;
  VectorXd x0;
  std::string out_dir = "out";
};

/// Strict parser: unknown keys, missing sections, and shape errors are
/// reported with their JSON path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json serialize_config(const ExperimentConfig& cfg);

/// Built-in reproductions: "table1" (the constrained integrator comparison)
/// and "appendixB" (the half-space example contrasting symmetric and
/// one-sided tightening).
ExperimentConfig preset(const std::string& name);

const char* controller_name(ControllerVariant v);
ControllerVariant parse_controller(const std::string& name);

/// Controllers an experiment runs: the single configured variant, or the
/// full comparison set when the config says "all".
std::vector<ControllerVariant> controllers_in(const ExperimentConfig& cfg);

/// Assembles the solver-facing configuration for one controller variant:
/// variance propagation, tightening, terminal ingredients (including their
/// admissibility check), and the precomputed QP template. The NominalMpc
/// variant replaces the tube gain by zero throughout; the pure gain variants
/// skip tightening and terminal construction.
SmpcConfig build_smpc_config(const ExperimentConfig& cfg, ControllerVariant variant);

}  // namespace smpc
