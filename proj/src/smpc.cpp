#include "smpc/smpc.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace smpc {

namespace {

constexpr double kResidualTol = 1e-7;

void build_template(SmpcConfig& cfg) {
  const int n = cfg.sys.state_dim();
  const int m = cfg.sys.input_dim();
  const int N = cfg.N;
  StepQpTemplate& t = cfg.tpl;
  t.n = n;
  t.m = m;
  t.horizon = N;
  t.dim = (N + 1) * n + N * m + 1;
  t.l_idx = (N + 1) * n + N * m;
  t.A_K = cfg.sys.A + cfg.sys.B * cfg.K;

  // Affine maps of the conditional mean trajectory:
  //   ubar_i = v_i + K (xbar_i - z_i),  xbar_{i+1} = A xbar_i + B ubar_i,
  // with the x-dependent parts (A_K^i x) handled per step.
  t.F.assign(static_cast<size_t>(N) + 1, MatrixXd::Zero(n, t.dim));
  t.Gu.assign(static_cast<size_t>(N), MatrixXd::Zero(m, t.dim));
  for (int i = 0; i < N; ++i) {
    MatrixXd& G = t.Gu[static_cast<size_t>(i)];
    G = cfg.K * t.F[static_cast<size_t>(i)];
    for (int c = 0; c < m; ++c) G(c, t.v_index(i) + c) += 1.0;
    G.middleCols(t.z_index(i), n) -= cfg.K;
    t.F[static_cast<size_t>(i) + 1] = cfg.sys.A * t.F[static_cast<size_t>(i)] + cfg.sys.B * G;
  }

  const MatrixXd& Pf = cfg.term.Pf;
  MatrixXd P = MatrixXd::Zero(t.dim, t.dim);
  for (int i = 0; i < N; ++i) {
    const MatrixXd& F = t.F[static_cast<size_t>(i)];
    const MatrixXd& G = t.Gu[static_cast<size_t>(i)];
    P += 2.0 * (F.transpose() * cfg.cost.Q * F + G.transpose() * cfg.cost.R * G);
  }
  P += 2.0 * t.F[static_cast<size_t>(N)].transpose() * Pf * t.F[static_cast<size_t>(N)];
  P(t.l_idx, t.l_idx) += 2.0 * cfg.lambda_penalty;
  t.P = 0.5 * (P + P.transpose());

  // Equality rows: interpolation (lambda column filled per step), nominal
  // dynamics, and point terminal sets.
  const bool point_terminal = cfg.term.Xf.kind == TerminalSet::Kind::Point;
  const int n_eq = n + N * n + (point_terminal ? n : 0);
  t.Aeq = MatrixXd::Zero(n_eq, t.dim);
  t.beq = VectorXd::Zero(n_eq);
  t.Aeq.block(0, t.z_index(0), n, n).setIdentity();
  for (int i = 0; i < N; ++i) {
    const int row = n + i * n;
    t.Aeq.block(row, t.z_index(i + 1), n, n).setIdentity();
    t.Aeq.block(row, t.z_index(i), n, n) = -cfg.sys.A;
    t.Aeq.block(row, t.v_index(i), n, m) = -cfg.sys.B;
  }
  if (point_terminal) {
    t.Aeq.block(n + N * n, t.z_index(N), n, n).setIdentity();
    t.beq.tail(n) = cfg.term.Xf.point;
  }

  // Inequality rows: tightened (x,u) constraints per prediction step, then
  // the half-space terminal rows.
  const Polytope& Z = cfg.chance.set;
  const int zr = Z.rows();
  const int term_rows = point_terminal ? 0 : cfg.term.Xf.poly.rows();
  t.Gineq = MatrixXd::Zero(N * zr + term_rows, t.dim);
  t.ineq_rows.clear();
  for (int i = 0; i < N; ++i) {
    for (int r = 0; r < zr; ++r) {
      const int row = i * zr + r;
      t.Gineq.block(row, t.z_index(i), 1, n) = Z.H.row(r).head(n);
      t.Gineq.block(row, t.v_index(i), 1, m) = Z.H.row(r).tail(m);
      t.ineq_rows.emplace_back(i, r);
    }
  }
  for (int r = 0; r < term_rows; ++r) {
    t.Gineq.block(N * zr + r, t.z_index(N), 1, n) = cfg.term.Xf.poly.H.row(r);
    t.ineq_rows.emplace_back(-1, r);
  }
}

}  // namespace

bool is_gain_variant(ControllerVariant v) {
  return v == ControllerVariant::FixedGain || v == ControllerVariant::LqrGain;
}

void SmpcConfig::finalize() {
  sys.validate();
  const int n = sys.state_dim();
  const int m = sys.input_dim();
  cost.validate(n, m);
  chance.validate();
  if (N < 1) throw std::invalid_argument("SmpcConfig: horizon must be at least 1");
  if (lambda_penalty < 0.0) throw std::invalid_argument("SmpcConfig: lambda_penalty must be >= 0");
  if (K.rows() != m || K.cols() != n) throw std::invalid_argument("SmpcConfig: K must be m x n");
  if (is_gain_variant(variant) && (gain.rows() != m || gain.cols() != n))
    throw std::invalid_argument("SmpcConfig: gain variants need an m x n feedback");
  if (chance.set.dim() != n + m)
    throw std::invalid_argument("SmpcConfig: chance constraint set must live in (x,u)");
  if (tightened.set_inf.rows() != chance.set.rows())
    throw std::invalid_argument("SmpcConfig: tightening does not match the constraint set");
  if (term.Pf.rows() != n || term.Pf.cols() != n || term.pf.size() != n)
    throw std::invalid_argument("SmpcConfig: terminal cost dimension mismatch");
  if (term.Kf.rows() != m || term.Kf.cols() != n)
    throw std::invalid_argument("SmpcConfig: Kf must be m x n");
  if (variances.k_max() < N)
    throw std::invalid_argument("SmpcConfig: variance sequence shorter than the horizon");

  cost_constant = expected_cost_constant(*this);
  build_template(*this);
}

double expected_cost_constant(const SmpcConfig& cfg) {
  const MatrixXd W = cfg.cost.Q + cfg.K.transpose() * cfg.cost.R * cfg.K;
  double total = 0.0;
  for (int i = 0; i < cfg.N; ++i) total += (W * cfg.variances.at(i)).trace();
  total += (cfg.term.Pf * cfg.variances.at(cfg.N)).trace();
  return total;
}

StepQp build_step_qp(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev, long k,
                     std::optional<double> pinned_lambda) {
  const StepQpTemplate& t = cfg.tpl;
  if (x.size() != t.n || z_prev.size() != t.n)
    throw std::invalid_argument("build_step_qp: state dimension mismatch");
  if (k < 0) throw std::invalid_argument("build_step_qp: negative time index");

  StepQp out;
  QuadraticProgram& qp = out.qp;
  qp.P = t.P;

  // Linear term and constant of the mean-trajectory cost, from
  // f_i = A_K^i x and g_i = K f_i.
  qp.q = VectorXd::Zero(t.dim);
  double offset = 0.0;
  VectorXd f = x;
  for (int i = 0; i < t.horizon; ++i) {
    const VectorXd g = cfg.K * f;
    qp.q += t.F[static_cast<size_t>(i)].transpose() * (2.0 * cfg.cost.Q * f + cfg.cost.q);
    qp.q += t.Gu[static_cast<size_t>(i)].transpose() * (2.0 * cfg.cost.R * g + cfg.cost.r);
    offset += f.dot(cfg.cost.Q * f) + cfg.cost.q.dot(f) + g.dot(cfg.cost.R * g) + cfg.cost.r.dot(g);
    f = t.A_K * f;
  }
  qp.q += t.F[static_cast<size_t>(t.horizon)].transpose() * (2.0 * cfg.term.Pf * f + cfg.term.pf);
  offset += f.dot(cfg.term.Pf * f) + cfg.term.pf.dot(f);
  out.mean_cost_offset = offset;

  const bool pin = pinned_lambda.has_value();
  qp.Aeq.resize(t.Aeq.rows() + (pin ? 1 : 0), t.dim);
  qp.beq.resize(qp.Aeq.rows());
  qp.Aeq.topRows(t.Aeq.rows()) = t.Aeq;
  qp.beq.head(t.beq.size()) = t.beq;
  qp.Aeq.block(0, t.l_idx, t.n, 1) = z_prev - x;
  qp.beq.head(t.n) = z_prev;
  if (pin) {
    qp.Aeq.row(qp.Aeq.rows() - 1).setZero();
    qp.Aeq(qp.Aeq.rows() - 1, t.l_idx) = 1.0;
    qp.beq(qp.beq.size() - 1) = *pinned_lambda;
  }

  qp.G = t.Gineq;
  qp.h.resize(t.Gineq.rows());
  for (size_t r = 0; r < t.ineq_rows.size(); ++r) {
    const auto [step, src] = t.ineq_rows[r];
    qp.h(static_cast<long>(r)) = step >= 0 ? cfg.tightened.at(k + step).h(src)
                                           : cfg.term.Xf.poly.h(src);
  }

  qp.lb = VectorXd::Constant(t.dim, -std::numeric_limits<double>::infinity());
  qp.ub = VectorXd::Constant(t.dim, std::numeric_limits<double>::infinity());
  qp.lb(t.l_idx) = 0.0;
  qp.ub(t.l_idx) = 1.0;
  return out;
}

namespace {

struct QpStepOutcome {
  bool feasible = false;
  MpcStepResult result;
};

void check_step_invariants(const SmpcConfig& cfg, const MpcStepResult& res, const VectorXd& x,
                           const VectorXd& z_prev, long k) {
  const int N = cfg.N;
  const VectorXd z0 = res.z_star.col(0);
  const double interp_res =
      (z0 - ((1.0 - res.lambda_star) * z_prev + res.lambda_star * x)).cwiseAbs().maxCoeff();
  double dyn_res = 0.0;
  for (int i = 0; i < N; ++i)
    dyn_res = std::max(dyn_res, (res.z_star.col(i + 1) - cfg.sys.A * res.z_star.col(i) -
                                 cfg.sys.B * res.v_star.col(i))
                                    .cwiseAbs()
                                    .maxCoeff());
  double memb = 0.0;
  VectorXd zu(cfg.sys.state_dim() + cfg.sys.input_dim());
  for (int i = 0; i < N; ++i) {
    zu << res.z_star.col(i), res.v_star.col(i);
    memb = std::max(memb, cfg.tightened.at(k + i).max_violation(zu));
  }
  double term_res = 0.0;
  if (cfg.term.Xf.kind == TerminalSet::Kind::Point)
    term_res = (res.z_star.col(N) - cfg.term.Xf.point).cwiseAbs().maxCoeff();
  else
    term_res = std::max(0.0, cfg.term.Xf.poly.max_violation(res.z_star.col(N)));

  const double worst = std::max({interp_res, dyn_res, memb, term_res});
  if (worst > kResidualTol) {
    std::ostringstream msg;
    msg << "solve_step: solution violates the step invariants at k=" << k
        << " (interp " << interp_res << ", dynamics " << dyn_res << ", membership " << memb
        << ", terminal " << term_res << ")";
    throw std::runtime_error(msg.str());
  }
}

QpStepOutcome solve_pinned(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev,
                           long k, std::optional<double> pinned) {
  const StepQp step = build_step_qp(cfg, x, z_prev, k, pinned);
  const QpSolution sol = solve_qp(step.qp);
  QpStepOutcome out;
  out.result.qp_iterations = sol.iterations;
  if (sol.status == QpStatus::MaxIter)
    throw std::runtime_error("solve_step: QP solver hit the iteration cap");
  if (sol.status == QpStatus::Infeasible) return out;

  const StepQpTemplate& t = cfg.tpl;
  MpcStepResult& r = out.result;
  r.z_star.resize(t.n, t.horizon + 1);
  for (int i = 0; i <= t.horizon; ++i) r.z_star.col(i) = sol.x.segment(t.z_index(i), t.n);
  r.v_star.resize(t.m, t.horizon);
  for (int i = 0; i < t.horizon; ++i) r.v_star.col(i) = sol.x.segment(t.v_index(i), t.m);
  const double raw_lambda = sol.x(t.l_idx);
  r.lambda_star = pinned ? *pinned : std::min(1.0, std::max(0.0, raw_lambda));
  if (std::abs(raw_lambda - r.lambda_star) > kResidualTol)
    throw std::runtime_error("solve_step: lambda left [0,1]");
  r.j_star = sol.objective + step.mean_cost_offset + cfg.cost_constant;
  r.u_applied = r.v_star.col(0) + cfg.K * (x - r.z_star.col(0));
  r.feasible = true;
  out.feasible = true;
  check_step_invariants(cfg, r, x, z_prev, k);
  return out;
}

}  // namespace

MpcStepResult solve_step(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev,
                         long k) {
  if (is_gain_variant(cfg.variant)) {
    MpcStepResult r;
    r.u_applied = cfg.gain * x;
    r.feasible = true;
    return r;
  }

  switch (cfg.variant) {
    case ControllerVariant::Proposed:
    case ControllerVariant::NominalMpc:
      return solve_pinned(cfg, x, z_prev, k, std::nullopt).result;
    case ControllerVariant::Indirect:
      return solve_pinned(cfg, x, z_prev, k, 0.0).result;
    case ControllerVariant::CaseMin: {
      QpStepOutcome zero = solve_pinned(cfg, x, z_prev, k, 0.0);
      QpStepOutcome one = solve_pinned(cfg, x, z_prev, k, 1.0);
      zero.result.qp_iterations += one.result.qp_iterations;
      one.result.qp_iterations = zero.result.qp_iterations;
      if (one.feasible && (!zero.feasible || one.result.j_star < zero.result.j_star))
        return one.result;
      return zero.result;  // covers the tie and the both-infeasible case
    }
    case ControllerVariant::CaseReset: {
      const StepQp reset_qp = build_step_qp(cfg, x, z_prev, k, 1.0);
      if (check_feasible(reset_qp.qp)) {
        QpStepOutcome one = solve_pinned(cfg, x, z_prev, k, 1.0);
        if (!one.feasible)
          throw std::runtime_error("solve_step: phase-1 and solve disagree on feasibility");
        return one.result;
      }
      return solve_pinned(cfg, x, z_prev, k, 0.0).result;
    }
    default:
      throw std::logic_error("solve_step: unhandled variant");
  }
}

Candidate shifted_candidate(const MpcStepResult& prev, const SmpcConfig& cfg, long /*k*/) {
  if (!prev.feasible) throw std::invalid_argument("shifted_candidate: previous step infeasible");
  const int N = cfg.N;
  Candidate cand;
  cand.lambda = 0.0;
  cand.v.resize(cfg.sys.input_dim(), N);
  cand.z.resize(cfg.sys.state_dim(), N + 1);
  for (int i = 0; i <= N - 1; ++i) cand.z.col(i) = prev.z_star.col(i + 1);
  for (int i = 0; i <= N - 2; ++i) cand.v.col(i) = prev.v_star.col(i + 1);
  cand.v.col(N - 1) = cfg.term.Kf * cand.z.col(N - 1);
  cand.z.col(N) = cfg.sys.A * cand.z.col(N - 1) + cfg.sys.B * cand.v.col(N - 1);
  return cand;
}

double candidate_max_violation(const Candidate& cand, const SmpcConfig& cfg, long k_next) {
  const int N = cfg.N;
  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    worst = std::max(worst, (cand.z.col(i + 1) - cfg.sys.A * cand.z.col(i) -
                             cfg.sys.B * cand.v.col(i))
                                .cwiseAbs()
                                .maxCoeff());
  }
  VectorXd zu(cfg.sys.state_dim() + cfg.sys.input_dim());
  for (int i = 0; i < N; ++i) {
    zu << cand.z.col(i), cand.v.col(i);
    worst = std::max(worst, cfg.tightened.at(k_next + i).max_violation(zu));
  }
  if (cfg.term.Xf.kind == TerminalSet::Kind::Point)
    worst = std::max(worst, (cand.z.col(N) - cfg.term.Xf.point).cwiseAbs().maxCoeff());
  else
    worst = std::max(worst, cfg.term.Xf.poly.max_violation(cand.z.col(N)));
  return worst;
}

}  // namespace smpc
