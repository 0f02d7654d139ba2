#include "smpc/runner.hpp"

#include "smpc/prs.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

namespace smpc {

namespace {

namespace fs = std::filesystem;

// All floats in the output files carry 9 significant digits; non-finite
// values become null in JSON and nan/inf in CSV.
std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string json_num(double v) { return std::isfinite(v) ? fmt9(v) : "null"; }

void write_per_step_csv(const fs::path& path, const MonteCarloStats& st) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "k,p_hat,p_stderr,mean_cost,mean_u,mean_x,mean_lambda\n";
  for (int k = 0; k < st.T; ++k) {
    out << k << ',' << fmt9(st.p_hat(k)) << ',' << fmt9(st.p_stderr(k)) << ','
        << fmt9(st.mean_cost_k(k)) << ',' << fmt9(st.mean_u_k(k)) << ',' << fmt9(st.mean_x_k(k))
        << ',' << fmt9(st.mean_lambda_k(k)) << '\n';
  }
}

void write_rollouts_csv(const fs::path& path, const std::vector<RolloutRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rollout,k,x,u,z0,lambda,stage_cost,satisfied\n";
  for (size_t r = 0; r < recs.size(); ++r) {
    const RolloutRecord& rec = recs[r];
    for (size_t k = 0; k < rec.steps.size(); ++k) {
      const StepLog& s = rec.steps[k];
      out << r << ',' << k << ',' << fmt9(s.x(0)) << ',' << fmt9(s.u(0)) << ','
          << fmt9(s.z0.size() > 0 ? s.z0(0) : std::numeric_limits<double>::quiet_NaN()) << ','
          << fmt9(s.lambda) << ',' << fmt9(s.stage_cost) << ',' << (s.satisfied ? 1 : 0) << '\n';
    }
  }
}

struct ControllerRun {
  ControllerVariant variant;
  MonteCarloStats stats;
};

}  // namespace

int run_experiment(const ExperimentConfig& base, const RunOverrides& overrides) {
  ExperimentConfig cfg = base;
  if (overrides.controller) cfg.variant = *overrides.controller;
  if (overrides.rollouts) cfg.rollouts = *overrides.rollouts;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  if (overrides.prs_shape) {
    const std::string& s = *overrides.prs_shape;
    if (s == "symmetric")
      cfg.prs.shape = PrsShape::SymmetricPerRow;
    else if (s == "one-sided")
      cfg.prs.shape = PrsShape::OneSidedPerRow;
    else if (s == "ellipsoidal")
      cfg.prs.shape = PrsShape::Ellipsoidal;
    else
      throw std::invalid_argument("unknown PRS shape \"" + s + "\"");
  }
  if (cfg.variant != "all") parse_controller(cfg.variant);

  const std::vector<ControllerVariant> variants = controllers_in(cfg);
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  std::vector<ControllerRun> runs;
  std::vector<std::vector<RolloutRecord>> kept(variants.size());
  for (size_t i = 0; i < variants.size(); ++i) {
    const ControllerVariant v = variants[i];
    const SmpcConfig sc = build_smpc_config(cfg, v);
    MonteCarloStats st = monte_carlo(sc, cfg.x0, cfg.T, static_cast<int>(cfg.rollouts),
                                     RngSpec{cfg.seed}, overrides.threads,
                                     overrides.keep_rollouts,
                                     overrides.keep_rollouts > 0 ? &kept[i] : nullptr);
    if (!overrides.quiet)
      std::cout << controller_name(v) << ": mean cost " << fmt9(st.mean_cost)
                << ", satisfaction " << fmt9(100.0 * st.avg_p_hat) << "%\n";
    runs.push_back(ControllerRun{v, std::move(st)});
  }

  // Baseline for the cost ratios: the u = Kx controller when it is part of
  // the run and its mean cost is meaningfully away from zero.
  double baseline = std::numeric_limits<double>::quiet_NaN();
  for (const ControllerRun& r : runs)
    if (r.variant == ControllerVariant::FixedGain) baseline = r.stats.mean_cost;

  // tr(P_f Sigma_w) performance bound, when the tube gain admits the
  // Lyapunov terminal cost.
  double bound = std::numeric_limits<double>::quiet_NaN();
  try {
    const auto [Pf, pf] = terminal_cost_from_lyapunov(cfg.system, cfg.K, cfg.cost);
    bound = (Pf * cfg.system.sigma_w).trace();
  } catch (const std::exception&) {
  }

  std::ofstream summary(out_dir / "summary.json");
  if (!summary) throw std::runtime_error("cannot write summary.json");
  summary << "{\n";
  summary << "  \"experiment\": \"" << overrides.label << "\",\n";
  summary << "  \"rollouts\": " << cfg.rollouts << ",\n";
  summary << "  \"steps\": " << cfg.T << ",\n";
  summary << "  \"seed\": " << cfg.seed << ",\n";
  const char* shape = cfg.prs.shape == PrsShape::SymmetricPerRow  ? "symmetric"
                      : cfg.prs.shape == PrsShape::OneSidedPerRow ? "one-sided"
                                                                  : "ellipsoidal";
  summary << "  \"prs_shape\": \"" << shape << "\",\n";
  summary << "  \"tr_pf_sigma_w\": " << json_num(bound) << ",\n";
  summary << "  \"controllers\": [\n";
  for (size_t i = 0; i < runs.size(); ++i) {
    const ControllerRun& r = runs[i];
    const double ratio = std::abs(baseline) > 1e-12 ? 100.0 * r.stats.mean_cost / baseline
                                                    : std::numeric_limits<double>::quiet_NaN();
    summary << "    {\"controller\": \"" << controller_name(r.variant) << "\""
            << ", \"mean_cost\": " << json_num(r.stats.mean_cost)
            << ", \"mean_cost_stderr\": " << json_num(r.stats.mean_cost_stderr)
            << ", \"cost_ratio_vs_fixed_gain_pct\": " << json_num(ratio)
            << ", \"satisfaction_pct\": " << json_num(100.0 * r.stats.avg_p_hat)
            << ", \"min_step_satisfaction_pct\": " << json_num(100.0 * r.stats.min_p_hat)
            << ", \"mean_lambda\": " << json_num(r.stats.mean_lambda) << "}"
            << (i + 1 < runs.size() ? "," : "") << "\n";
  }
  summary << "  ]\n}\n";
  summary.close();

  for (size_t i = 0; i < runs.size(); ++i) {
    const fs::path sub = out_dir / controller_name(runs[i].variant);
    fs::create_directories(sub);
    write_per_step_csv(sub / "per_step.csv", runs[i].stats);
    if (overrides.keep_rollouts > 0) write_rollouts_csv(sub / "rollouts.csv", kept[i]);
  }
  if (runs.size() == 1) {
    write_per_step_csv(out_dir / "per_step.csv", runs[0].stats);
    if (overrides.keep_rollouts > 0) write_rollouts_csv(out_dir / "rollouts.csv", kept[0]);
  }
  return 0;
}

}  // namespace smpc
