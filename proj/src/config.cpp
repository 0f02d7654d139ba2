#include "smpc/config.hpp"

#include "smpc/prs.hpp"


#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace smpc {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

const json& need(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) fail(path + "." + key, "missing");
  return obj.at(key);
}

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!ok.count(key)) fail(path + "." + key, "unknown key");
}

double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

MatrixXd matrix_at(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty nested array");
  const size_t cols = v.at(0).is_array() ? v.at(0).size() : 0;
  if (cols == 0) fail(path, "expected rows of numbers");
  MatrixXd M(static_cast<long>(v.size()), static_cast<long>(cols));
  for (size_t i = 0; i < v.size(); ++i) {
    const json& row = v.at(i);
    if (!row.is_array() || row.size() != cols) fail(path, "ragged matrix rows");
    for (size_t j = 0; j < cols; ++j)
      M(static_cast<long>(i), static_cast<long>(j)) =
          number_at(row.at(j), path + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  }
  return M;
}

VectorXd vector_at(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array of numbers");
  VectorXd x(static_cast<long>(v.size()));
  for (size_t i = 0; i < v.size(); ++i)
    x(static_cast<long>(i)) = number_at(v.at(i), path + "[" + std::to_string(i) + "]");
  return x;
}

json matrix_to_json(const MatrixXd& M) {
  json rows = json::array();
  for (long i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  reject_unknown(doc, "config",
                 {"system", "cost", "constraints", "controller", "prs", "terminal", "simulation",
                  "output"});
  ExperimentConfig cfg;

  {
    const json& sys = need(doc, "config", "system");
    reject_unknown(sys, "config.system", {"A", "B", "sigma_w", "disturbance"});
    cfg.system.A = matrix_at(need(sys, "config.system", "A"), "config.system.A");
    cfg.system.B = matrix_at(need(sys, "config.system", "B"), "config.system.B");
    cfg.system.sigma_w =
        matrix_at(need(sys, "config.system", "sigma_w"), "config.system.sigma_w");
    const std::string law = need(sys, "config.system", "disturbance").get<std::string>();
    if (law == "gaussian")
      cfg.system.law = DisturbanceLaw::Gaussian;
    else if (law == "uniform-box")
      cfg.system.law = DisturbanceLaw::UniformBox;
    else
      fail("config.system.disturbance", "expected \"gaussian\" or \"uniform-box\"");
    cfg.system.validate();
  }

  const int n = cfg.system.state_dim();
  const int m = cfg.system.input_dim();

  {
    const json& cost = need(doc, "config", "cost");
    reject_unknown(cost, "config.cost", {"Q", "q", "R", "r"});
    cfg.cost.Q = matrix_at(need(cost, "config.cost", "Q"), "config.cost.Q");
    cfg.cost.q = vector_at(need(cost, "config.cost", "q"), "config.cost.q");
    cfg.cost.R = matrix_at(need(cost, "config.cost", "R"), "config.cost.R");
    cfg.cost.r = vector_at(need(cost, "config.cost", "r"), "config.cost.r");
    cfg.cost.validate(n, m);
  }

  {
    const json& con = need(doc, "config", "constraints");
    reject_unknown(con, "config.constraints", {"H", "h", "p", "allocation"});
    cfg.constraint_set.H = matrix_at(need(con, "config.constraints", "H"), "config.constraints.H");
    cfg.constraint_set.h = vector_at(need(con, "config.constraints", "h"), "config.constraints.h");
    if (cfg.constraint_set.dim() != n + m)
      fail("config.constraints.H", "rows must have n+m columns");
    cfg.level = number_at(need(con, "config.constraints", "p"), "config.constraints.p");
    const json& alloc = need(con, "config.constraints", "allocation");
    if (alloc.is_string() && alloc.get<std::string>() == "joint") {
      cfg.allocation = RiskAllocation::Joint;
    } else if (alloc.is_array()) {
      cfg.allocation = RiskAllocation::PerRow;
      cfg.row_levels = vector_at(alloc, "config.constraints.allocation");
    } else {
      fail("config.constraints.allocation", "expected \"joint\" or an array of levels");
    }
  }

  {
    const json& ctl = need(doc, "config", "controller");
    reject_unknown(ctl, "config.controller", {"variant", "K", "K_lqr", "N", "lambda_penalty"});
    cfg.variant = need(ctl, "config.controller", "variant").get<std::string>();
    if (cfg.variant != "all") parse_controller(cfg.variant);  // validates the name
    cfg.K = matrix_at(need(ctl, "config.controller", "K"), "config.controller.K");
    cfg.K_lqr = matrix_at(need(ctl, "config.controller", "K_lqr"), "config.controller.K_lqr");
    if (cfg.K.rows() != m || cfg.K.cols() != n) fail("config.controller.K", "must be m x n");
    if (cfg.K_lqr.rows() != m || cfg.K_lqr.cols() != n)
      fail("config.controller.K_lqr", "must be m x n");
    cfg.N = need(ctl, "config.controller", "N").get<int>();
    cfg.lambda_penalty =
        number_at(need(ctl, "config.controller", "lambda_penalty"), "config.controller.lambda_penalty");
    if (cfg.N < 1) fail("config.controller.N", "must be >= 1");
    if (cfg.lambda_penalty < 0) fail("config.controller.lambda_penalty", "must be >= 0");
  }

  {
    const json& prs = need(doc, "config", "prs");
    reject_unknown(prs, "config.prs", {"mode", "shape", "stationary"});
    const std::string mode = need(prs, "config.prs", "mode").get<std::string>();
    if (mode == "gaussian")
      cfg.prs.mode = PrsMode::GaussianExact;
    else if (mode == "chebyshev")
      cfg.prs.mode = PrsMode::Chebyshev;
    else
      fail("config.prs.mode", "expected \"gaussian\" or \"chebyshev\"");
    const std::string shape = need(prs, "config.prs", "shape").get<std::string>();
    if (shape == "symmetric")
      cfg.prs.shape = PrsShape::SymmetricPerRow;
    else if (shape == "one-sided")
      cfg.prs.shape = PrsShape::OneSidedPerRow;
    else if (shape == "ellipsoidal")
      cfg.prs.shape = PrsShape::Ellipsoidal;
    else
      fail("config.prs.shape", "expected \"symmetric\", \"one-sided\" or \"ellipsoidal\"");
    cfg.prs.stationary = need(prs, "config.prs", "stationary").get<bool>();
    cfg.prs.level = cfg.level;
  }

  {
    const json& term = need(doc, "config", "terminal");
    reject_unknown(term, "config.terminal", {"type", "Kf"});
    cfg.terminal_type = need(term, "config.terminal", "type").get<std::string>();
    if (cfg.terminal_type != "origin" && cfg.terminal_type != "halfspace-from-tightening")
      fail("config.terminal.type", "expected \"origin\" or \"halfspace-from-tightening\"");
    cfg.Kf = matrix_at(need(term, "config.terminal", "Kf"), "config.terminal.Kf");
    if (cfg.Kf.rows() != m || cfg.Kf.cols() != n) fail("config.terminal.Kf", "must be m x n");
  }

  {
    const json& sim = need(doc, "config", "simulation");
    reject_unknown(sim, "config.simulation", {"T", "rollouts", "seed", "x0"});
    cfg.T = need(sim, "config.simulation", "T").get<int>();
    cfg.rollouts = need(sim, "config.simulation", "rollouts").get<long>();
    cfg.seed = need(sim, "config.simulation", "seed").get<std::uint64_t>();
    cfg.x0 = vector_at(need(sim, "config.simulation", "x0"), "config.simulation.x0");
    if (cfg.T < 1) fail("config.simulation.T", "must be >= 1");
    if (cfg.rollouts < 1) fail("config.simulation.rollouts", "must be >= 1");
    if (cfg.x0.size() != n) fail("config.simulation.x0", "must have n entries");
  }

  {
    const json& out = need(doc, "config", "output");
    reject_unknown(out, "config.output", {"directory"});
    cfg.out_dir = need(out, "config.output", "directory").get<std::string>();
  }

  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return parse_config(doc);
}

json serialize_config(const ExperimentConfig& cfg) {
  json doc;
  doc["system"] = {
      {"A", matrix_to_json(cfg.system.A)},
      {"B", matrix_to_json(cfg.system.B)},
      {"sigma_w", matrix_to_json(cfg.system.sigma_w)},
      {"disturbance", cfg.system.law == DisturbanceLaw::Gaussian ? "gaussian" : "uniform-box"},
  };
  doc["cost"] = {
      {"Q", matrix_to_json(cfg.cost.Q)},
      {"q", vector_to_json(cfg.cost.q)},
      {"R", matrix_to_json(cfg.cost.R)},
      {"r", vector_to_json(cfg.cost.r)},
  };
  doc["constraints"] = {
      {"H", matrix_to_json(cfg.constraint_set.H)},
      {"h", vector_to_json(cfg.constraint_set.h)},
      {"p", cfg.level},
      {"allocation", cfg.allocation == RiskAllocation::Joint
                         ? json("joint")
                         : vector_to_json(cfg.row_levels)},
  };
  doc["controller"] = {
      {"variant", cfg.variant},           {"K", matrix_to_json(cfg.K)},
      {"K_lqr", matrix_to_json(cfg.K_lqr)}, {"N", cfg.N},
      {"lambda_penalty", cfg.lambda_penalty},
  };
  const char* shape = cfg.prs.shape == PrsShape::SymmetricPerRow  ? "symmetric"
                      : cfg.prs.shape == PrsShape::OneSidedPerRow ? "one-sided"
                                                                  : "ellipsoidal";
  doc["prs"] = {
      {"mode", cfg.prs.mode == PrsMode::GaussianExact ? "gaussian" : "chebyshev"},
      {"shape", shape},
      {"stationary", cfg.prs.stationary},
  };
  doc["terminal"] = {{"type", cfg.terminal_type}, {"Kf", matrix_to_json(cfg.Kf)}};
  doc["simulation"] = {
      {"T", cfg.T}, {"rollouts", cfg.rollouts}, {"seed", cfg.seed},
      {"x0", vector_to_json(cfg.x0)},
  };
  doc["output"] = {{"directory", cfg.out_dir}};
  return doc;
}

ExperimentConfig preset(const std::string& name) {
  if (name == "table1") {
    ExperimentConfig cfg;
    cfg.system.A = (MatrixXd(1, 1) << 1.0).finished();
    cfg.system.B = (MatrixXd(1, 1) << 1.0).finished();
    cfg.system.sigma_w = (MatrixXd(1, 1) << 1.0).finished();
    cfg.system.law = DisturbanceLaw::Gaussian;
    cfg.cost.Q = (MatrixXd(1, 1) << 1.0).finished();
    cfg.cost.q = VectorXd::Zero(1);
    cfg.cost.R = (MatrixXd(1, 1) << 0.0).finished();
    cfg.cost.r = VectorXd::Zero(1);
    cfg.constraint_set.H = (MatrixXd(2, 2) << 0.0, 1.0, 0.0, -1.0).finished();
    cfg.constraint_set.h = (VectorXd(2) << 1.0, 1.0).finished();
    cfg.level = 0.8061;
    cfg.allocation = RiskAllocation::Joint;
    cfg.variant = "all";
    cfg.K = (MatrixXd(1, 1) << -0.5).finished();
    cfg.K_lqr = (MatrixXd(1, 1) << -1.0).finished();
    cfg.N = 10;
    cfg.lambda_penalty = 0.0;
    cfg.prs = PrsSpec{PrsMode::GaussianExact, PrsShape::SymmetricPerRow, cfg.level, true};
    cfg.terminal_type = "origin";
    cfg.Kf = (MatrixXd(1, 1) << -0.5).finished();
    cfg.T = 40;
    cfg.rollouts = 10000;
    cfg.seed = 1;
    cfg.x0 = VectorXd::Zero(1);
    cfg.out_dir = "out/table1";
    return cfg;
  }
  if (name == "appendixB") {
    ExperimentConfig cfg;
    cfg.system.A = (MatrixXd(1, 1) << 0.75).finished();
    cfg.system.B = (MatrixXd(1, 1) << 1.0).finished();
    cfg.system.sigma_w = (MatrixXd(1, 1) << 1.0).finished();
    cfg.system.law = DisturbanceLaw::Gaussian;
    cfg.cost.Q = (MatrixXd(1, 1) << 0.0).finished();
    cfg.cost.q = VectorXd::Zero(1);
    cfg.cost.R = (MatrixXd(1, 1) << 0.0).finished();
    cfg.cost.r = (VectorXd(1) << 1.0).finished();  // stage cost l(x,u) = u
    cfg.constraint_set.H = (MatrixXd(1, 2) << -1.0, 0.0).finished();
    cfg.constraint_set.h = (VectorXd(1) << 2.0).finished();
    // Chance level chosen so the symmetric stationary tightening comes out
    // as exactly x >= 0 (sigma_inf = 16/7, p = 2 Phi(2 / sqrt(16/7)) - 1);
    // rounds to 81.4%.
    cfg.level = 2.0 * normal_cdf(2.0 / std::sqrt(16.0 / 7.0)) - 1.0;
    cfg.allocation = RiskAllocation::Joint;
    cfg.variant = "proposed";
    cfg.K = (MatrixXd(1, 1) << 0.0).finished();
    cfg.K_lqr = (MatrixXd(1, 1) << 0.0).finished();
    cfg.N = 10;
    cfg.lambda_penalty = 0.0;
    cfg.prs = PrsSpec{PrsMode::GaussianExact, PrsShape::SymmetricPerRow, cfg.level, true};
    cfg.terminal_type = "halfspace-from-tightening";
    cfg.Kf = (MatrixXd(1, 1) << 0.0).finished();
    cfg.T = 40;
    cfg.rollouts = 10000;
    cfg.seed = 1;
    cfg.x0 = VectorXd::Zero(1);
    cfg.out_dir = "out/appendixB";
    return cfg;
  }
  throw std::invalid_argument("preset: unknown name \"" + name + "\"");
}

const char* controller_name(ControllerVariant v) {
  switch (v) {
    case ControllerVariant::Proposed: return "proposed";
    case ControllerVariant::CaseMin: return "case-min";
    case ControllerVariant::CaseReset: return "case-reset";
    case ControllerVariant::Indirect: return "indirect";
    case ControllerVariant::NominalMpc: return "nominal";
    case ControllerVariant::FixedGain: return "fixed-gain";
    case ControllerVariant::LqrGain: return "lqr";
  }
  return "?";
}

ControllerVariant parse_controller(const std::string& name) {
  if (name == "proposed") return ControllerVariant::Proposed;
  if (name == "case-min") return ControllerVariant::CaseMin;
  if (name == "case-reset") return ControllerVariant::CaseReset;
  if (name == "indirect") return ControllerVariant::Indirect;
  if (name == "nominal") return ControllerVariant::NominalMpc;
  if (name == "fixed-gain") return ControllerVariant::FixedGain;
  if (name == "lqr") return ControllerVariant::LqrGain;
  throw std::invalid_argument("unknown controller \"" + name + "\"");
}

std::vector<ControllerVariant> controllers_in(const ExperimentConfig& cfg) {
  if (cfg.variant == "all") {
    return {ControllerVariant::LqrGain,   ControllerVariant::Proposed,
            ControllerVariant::CaseMin,   ControllerVariant::Indirect,
            ControllerVariant::NominalMpc, ControllerVariant::FixedGain,
            ControllerVariant::CaseReset};
  }
  return {parse_controller(cfg.variant)};
}

SmpcConfig build_smpc_config(const ExperimentConfig& cfg, ControllerVariant variant) {
  SmpcConfig out;
  out.sys = cfg.system;
  out.cost = cfg.cost;
  out.variant = variant;
  out.N = cfg.N;
  out.lambda_penalty = cfg.lambda_penalty;

  const int n = cfg.system.state_dim();
  const int m = cfg.system.input_dim();
  out.K = variant == ControllerVariant::NominalMpc ? MatrixXd::Zero(m, n) : cfg.K;
  if (variant == ControllerVariant::FixedGain) out.gain = cfg.K;
  if (variant == ControllerVariant::LqrGain) out.gain = cfg.K_lqr;

  out.chance.set = cfg.constraint_set;
  out.chance.level = cfg.level;
  out.chance.allocation = cfg.allocation;
  out.chance.row_levels = cfg.row_levels;

  const int k_max = cfg.T + cfg.N + 1;
  const MatrixXd A_K = cfg.system.A + cfg.system.B * out.K;
  out.variances = propagate_variance(A_K, cfg.system.sigma_w, k_max);

  if (is_gain_variant(variant)) {
    // No step problem is ever built: untightened constraints and a trivial
    // terminal block keep the config self-consistent.
    TightenedConstraints tc;
    tc.stationary = true;
    tc.margins = MatrixXd::Zero(cfg.constraint_set.rows(), k_max + 1);
    tc.margins_inf = VectorXd::Zero(cfg.constraint_set.rows());
    tc.sets.assign(static_cast<size_t>(k_max) + 1, cfg.constraint_set);
    tc.set_inf = cfg.constraint_set;
    out.tightened = std::move(tc);
    out.term.Xf = TerminalSet::origin(n);
    out.term.Kf = MatrixXd::Zero(m, n);
    out.term.Pf = MatrixXd::Zero(n, n);
    out.term.pf = VectorXd::Zero(n);
    out.finalize();
    return out;
  }

  out.tightened = tighten(out.chance, out.K, out.variances, cfg.prs);

  out.term.Kf = variant == ControllerVariant::NominalMpc ? MatrixXd::Zero(m, n) : cfg.Kf;
  if (cfg.terminal_type == "origin") {
    out.term.Xf = TerminalSet::origin(n);
    if (variant == ControllerVariant::NominalMpc) {
      // A Lyapunov terminal cost need not exist for K = 0; the terminal
      // equality constraint carries the recursion on its own.
      out.term.Pf = MatrixXd::Zero(n, n);
      out.term.pf = VectorXd::Zero(n);
    } else {
      std::tie(out.term.Pf, out.term.pf) = terminal_cost_from_lyapunov(cfg.system, out.K, cfg.cost);
    }
  } else {
    // State-only rows of the limiting tightened set become the terminal set;
    // the terminal cost is identically zero.
    std::vector<int> state_rows;
    for (int r = 0; r < cfg.constraint_set.rows(); ++r)
      if (cfg.constraint_set.H.row(r).tail(m).cwiseAbs().maxCoeff() <= 1e-14)
        state_rows.push_back(r);
    if (state_rows.empty())
      throw std::invalid_argument(
          "config: halfspace-from-tightening needs at least one state-only constraint row");
    Polytope Xf;
    Xf.H.resize(static_cast<long>(state_rows.size()), n);
    Xf.h.resize(static_cast<long>(state_rows.size()));
    for (size_t i = 0; i < state_rows.size(); ++i) {
      Xf.H.row(static_cast<long>(i)) = cfg.constraint_set.H.row(state_rows[i]).head(n);
      Xf.h(static_cast<long>(i)) = out.tightened.set_inf.h(state_rows[i]);
    }
    out.term.Xf = TerminalSet::halfspaces(std::move(Xf));
    out.term.Pf = MatrixXd::Zero(n, n);
    out.term.pf = VectorXd::Zero(n);
  }

  const AdmissibilityReport rep =
      check_terminal_admissibility(out.term, cfg.system, out.tightened.set_inf);
  if (!rep.ok)
    throw std::invalid_argument("config: terminal ingredients fail admissibility: " + rep.detail);

  out.finalize();
  return out;
}

}  // namespace smpc
