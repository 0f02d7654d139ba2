#include "smpc/smpc.hpp"

#include "smpc/config.hpp"
#include "smpc/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace smpc;

namespace {

SmpcConfig table1_cfg(ControllerVariant v) { return build_smpc_config(preset("table1"), v); }

SmpcConfig halfspace_cfg(ControllerVariant v, PrsShape shape) {
  ExperimentConfig e = preset("appendixB");
  e.prs.shape = shape;
  return build_smpc_config(e, v);
}

VectorXd v1(double v) { return (VectorXd(1) << v).finished(); }

// Full expected cost of a feasible candidate point, through the same QP data
// the solver sees.
double candidate_cost(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev, long k,
                      const Candidate& cand) {
  const StepQp step = build_step_qp(cfg, x, z_prev, k);
  VectorXd theta(cfg.tpl.dim);
  for (int i = 0; i <= cfg.N; ++i) theta.segment(cfg.tpl.z_index(i), cfg.tpl.n) = cand.z.col(i);
  for (int i = 0; i < cfg.N; ++i) theta.segment(cfg.tpl.v_index(i), cfg.tpl.m) = cand.v.col(i);
  theta(cfg.tpl.l_idx) = cand.lambda;
  return 0.5 * theta.dot(step.qp.P * theta) + step.qp.q.dot(theta) + step.mean_cost_offset +
         cfg.cost_constant;
}

}  // namespace

TEST_CASE("expected cost constant") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  // direct summation oracle over the recursion values
  double expect = 0.0;
  const MatrixXd W = cfg.cost.Q + cfg.K.transpose() * cfg.cost.R * cfg.K;
  for (int i = 0; i < cfg.N; ++i) expect += (W * cfg.variances.at(i)).trace();
  expect += (cfg.term.Pf * cfg.variances.at(cfg.N)).trace();
  CHECK(expected_cost_constant(cfg) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(cfg.cost_constant == expected_cost_constant(cfg));

  // N = 1: the only term is tr(P_f Sigma_w)
  ExperimentConfig e = preset("table1");
  e.N = 1;
  SmpcConfig one = build_smpc_config(e, ControllerVariant::Proposed);
  CHECK(expected_cost_constant(one) ==
        doctest::Approx((one.term.Pf * one.sys.sigma_w).trace()).epsilon(1e-12));
}

TEST_CASE("interpolation endpoints coincide at z_prev = x") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  const VectorXd x = v1(0.7);
  const MpcStepResult free_l = solve_step(cfg, x, x, 0);
  REQUIRE(free_l.feasible);
  CHECK((free_l.z_star.col(0) - x).cwiseAbs().maxCoeff() <= 1e-7);

  SmpcConfig ind = table1_cfg(ControllerVariant::Indirect);
  const MpcStepResult pinned = solve_step(ind, x, x, 0);
  REQUIRE(pinned.feasible);
  CHECK((free_l.u_applied - pinned.u_applied).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("lambda pinned to one collapses the mean onto the nominal trajectory") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  const VectorXd x = v1(1.1);
  const StepQp step = build_step_qp(cfg, x, v1(0.2), 3, 1.0);
  const QpSolution sol = solve_qp(step.qp);
  REQUIRE(sol.status == QpStatus::Optimal);
  // mean cost at the solution equals the nominal cost sum l(z_i, v_i) + V_f(z_N)
  double nominal = 0.0;
  for (int i = 0; i < cfg.N; ++i) {
    const VectorXd z = sol.x.segment(cfg.tpl.z_index(i), 1);
    const VectorXd v = sol.x.segment(cfg.tpl.v_index(i), 1);
    nominal += cfg.cost.evaluate(z, v);
  }
  const VectorXd zN = sol.x.segment(cfg.tpl.z_index(cfg.N), 1);
  nominal += zN.dot(cfg.term.Pf * zN) + cfg.term.pf.dot(zN);
  CHECK(sol.objective + step.mean_cost_offset == doctest::Approx(nominal).epsilon(1e-7));
}

TEST_CASE("free lambda matches a pinned-lambda grid search") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  const VectorXd x = v1(0.8);
  const VectorXd z_prev = v1(0.3);
  const MpcStepResult res = solve_step(cfg, x, z_prev, 0);
  REQUIRE(res.feasible);
  double best = std::numeric_limits<double>::infinity();
  for (int g = 0; g <= 100; ++g) {
    const StepQp step = build_step_qp(cfg, x, z_prev, 0, g / 100.0);
    const QpSolution sol = solve_qp(step.qp);
    if (sol.status == QpStatus::Optimal)
      best = std::min(best, sol.objective + step.mean_cost_offset + cfg.cost_constant);
  }
  CHECK(res.j_star <= best + 1e-6);
  CHECK(std::abs(res.j_star - best) <= 1e-5 * (1.0 + std::abs(best)));
}

TEST_CASE("feasible-set nesting against the pinned extremes") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 10; ++t) {
    const VectorXd x = v1(1.2 * nd(rng));
    const VectorXd z_prev = v1(0.8 * nd(rng));
    const MpcStepResult res = solve_step(cfg, x, z_prev, 0);
    REQUIRE(res.feasible);
    CHECK(res.lambda_star >= 0.0);
    CHECK(res.lambda_star <= 1.0);
    for (double pin : {0.0, 1.0}) {
      const StepQp step = build_step_qp(cfg, x, z_prev, 0, pin);
      const QpSolution sol = solve_qp(step.qp);
      if (sol.status == QpStatus::Optimal)
        CHECK(res.j_star <= sol.objective + step.mean_cost_offset + cfg.cost_constant + 1e-6);
    }
  }
}

TEST_CASE("gain variants bypass the optimization") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::FixedGain);
  const MpcStepResult res = solve_step(cfg, v1(2.0), v1(0.0), 0);
  CHECK(res.u_applied(0) == doctest::Approx(-1.0));
  CHECK(std::isnan(res.lambda_star));
  CHECK(std::isnan(res.j_star));

  SmpcConfig lqr = table1_cfg(ControllerVariant::LqrGain);
  CHECK(solve_step(lqr, v1(2.0), v1(0.0), 0).u_applied(0) == doctest::Approx(-2.0));
}

TEST_CASE("reset branch infeasible far outside the tightened set") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  // lambda = 1 forces z_0 = x; |x| > N * 0.25 cannot reach the origin
  const StepQp step = build_step_qp(cfg, v1(10.0), v1(0.0), 0, 1.0);
  CHECK_FALSE(check_feasible(step.qp));
  const StepQp near = build_step_qp(cfg, v1(2.0), v1(0.0), 0, 1.0);
  CHECK(check_feasible(near.qp));
}

TEST_CASE("infeasible start is reported, not masked") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  const MpcStepResult res = solve_step(cfg, v1(10.0), v1(10.0), 0);
  CHECK_FALSE(res.feasible);
}

TEST_CASE("half-space example: indirect with one-sided tightening settles at -0.1624") {
  SmpcConfig cfg = halfspace_cfg(ControllerVariant::Indirect, PrsShape::OneSidedPerRow);
  RolloutRng rng(7, 0);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 15, rng);
  CHECK(rec.steps[0].u(0) == doctest::Approx(-0.649618093490713).epsilon(1e-6));
  for (size_t k = 1; k < rec.steps.size(); ++k) {
    CHECK(std::abs(rec.steps[k].u(0) - (-0.1624)) <= 1e-3);
    CHECK(rec.steps[k].u(0) == doctest::Approx(-0.162404523372678).epsilon(1e-6));
  }
}

TEST_CASE("half-space example: indirect with symmetric tightening keeps u at zero") {
  SmpcConfig cfg = halfspace_cfg(ControllerVariant::Indirect, PrsShape::SymmetricPerRow);
  RolloutRng rng(9, 1);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 15, rng);
  for (const StepLog& s : rec.steps) CHECK(std::abs(s.u(0)) <= 1e-6);
}

TEST_CASE("shifted candidate: feasibility and suboptimality along a rollout") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  std::mt19937_64 noise(77);
  std::normal_distribution<double> nd;
  VectorXd x = v1(0.0);
  VectorXd z_prev = x;
  MpcStepResult prev;
  for (long k = 0; k < 100; ++k) {
    const MpcStepResult res = solve_step(cfg, x, z_prev, k);
    REQUIRE(res.feasible);
    if (k > 0) {
      const Candidate cand = shifted_candidate(prev, cfg, k - 1);
      CHECK(candidate_max_violation(cand, cfg, k) <= 1e-7);
      CHECK((cand.z.col(0) - z_prev).cwiseAbs().maxCoeff() <= 1e-12);
      // the candidate is feasible for the minimized problem
      CHECK(candidate_cost(cfg, x, z_prev, k, cand) >= res.j_star - 1e-6);
    }
    // error identity e(k) = (1 - lambda)(x - z_prev)
    const VectorXd e = x - res.z_star.col(0);
    CHECK((e - (1.0 - res.lambda_star) * (x - z_prev)).cwiseAbs().maxCoeff() <= 1e-7);

    prev = res;
    z_prev = res.z_star.col(1);
    x = cfg.sys.A * x + cfg.sys.B * res.u_applied + v1(nd(noise));
  }
}

TEST_CASE("candidate with terminal state at the origin stays there") {
  SmpcConfig cfg = table1_cfg(ControllerVariant::Proposed);
  const MpcStepResult res = solve_step(cfg, v1(0.5), v1(0.5), 0);
  REQUIRE(res.feasible);
  CHECK(std::abs(res.z_star(0, cfg.N)) <= 1e-7);
  const Candidate cand = shifted_candidate(res, cfg, 0);
  CHECK(std::abs(cand.z(0, cfg.N)) <= 1e-7);
}

TEST_CASE("time-varying tightening indexes the step problem by absolute time") {
  ExperimentConfig e = preset("table1");
  e.prs.stationary = false;
  SmpcConfig cfg = build_smpc_config(e, ControllerVariant::Proposed);

  // at absolute time 0 the first predicted step sees the untightened set
  const StepQp at0 = build_step_qp(cfg, v1(0.4), v1(0.4), 0);
  CHECK(at0.qp.h(0) == doctest::Approx(1.0));
  // deeper prediction steps and later absolute times see tightened rows
  const double d5 = row_tightening((VectorXd(1) << 0.0).finished(),
                                   (VectorXd(1) << 1.0).finished(), cfg.K,
                                   cfg.variances.at(5), e.level, e.prs);
  CHECK(at0.qp.h(2 * 5) == doctest::Approx(1.0 - d5).epsilon(1e-12));
  const StepQp at9 = build_step_qp(cfg, v1(0.4), v1(0.4), 9);
  const double d9 = row_tightening((VectorXd(1) << 0.0).finished(),
                                   (VectorXd(1) << 1.0).finished(), cfg.K,
                                   cfg.variances.at(9), e.level, e.prs);
  CHECK(at9.qp.h(0) == doctest::Approx(1.0 - d9).epsilon(1e-12));

  // the closed loop still runs and satisfies the step invariants
  RolloutRng rng(5, 0);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 12, rng);
  CHECK(rec.steps.size() == 12);
}

TEST_CASE("case variants agree with their definitions") {
  SmpcConfig prop = table1_cfg(ControllerVariant::Proposed);
  SmpcConfig cmin = table1_cfg(ControllerVariant::CaseMin);
  SmpcConfig crst = table1_cfg(ControllerVariant::CaseReset);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 10; ++t) {
    const VectorXd x = v1(1.5 * nd(rng));
    const VectorXd z_prev = v1(nd(rng));

    const MpcStepResult a = solve_step(cmin, x, z_prev, 0);
    REQUIRE(a.feasible);
    CHECK((a.lambda_star == 0.0 || a.lambda_star == 1.0));
    double best = std::numeric_limits<double>::infinity();
    for (double pin : {0.0, 1.0}) {
      const StepQp step = build_step_qp(cmin, x, z_prev, 0, pin);
      const QpSolution sol = solve_qp(step.qp);
      if (sol.status == QpStatus::Optimal)
        best = std::min(best, sol.objective + step.mean_cost_offset + cmin.cost_constant);
    }
    CHECK(a.j_star == doctest::Approx(best).epsilon(1e-9));

    const MpcStepResult b = solve_step(crst, x, z_prev, 0);
    REQUIRE(b.feasible);
    const StepQp reset = build_step_qp(crst, x, z_prev, 0, 1.0);
    CHECK(b.lambda_star == (check_feasible(reset.qp) ? 1.0 : 0.0));

    // proposed is never worse than the case distinction
    const MpcStepResult c = solve_step(prop, x, z_prev, 0);
    CHECK(c.j_star <= a.j_star + 1e-6);
  }
}
