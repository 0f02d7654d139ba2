#pragma once

#include "smpc/model.hpp"
#include "smpc/prs.hpp"
#include "smpc/qp.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace smpc {

/// Initialization strategy for the nominal initial state z_0. Proposed
/// optimizes the interpolation weight lambda in [0,1]; CaseMin restricts it
/// to {0,1} and keeps the cheaper solution; CaseReset picks 1 whenever that
/// is feasible; Indirect pins 0. NominalMpc runs the Proposed machinery with
/// K = 0 everywhere. FixedGain and LqrGain bypass the optimization and apply
/// a static feedback.
enum class ControllerVariant {
  Proposed,
  CaseMin,
  CaseReset,
  Indirect,
  NominalMpc,
  FixedGain,
  LqrGain,
};

bool is_gain_variant(ControllerVariant v);

/// Precomputed structure of the per-step QP, shared by every step of a
/// rollout. The decision vector is theta = (z_0..z_N, v_0..v_{N-1}, lambda);
/// the affine maps xbar_i = F_i theta + A_K^i x and ubar_i = Gu_i theta +
/// K A_K^i x express the conditional mean trajectory of the predicted state.
struct StepQpTemplate {
  int n = 0, m = 0, horizon = 0, dim = 0;
  int l_idx = 0;
  MatrixXd P;                                  // constant objective matrix
  MatrixXd Aeq;                                // lambda column of interp rows left zero
  VectorXd beq;                                // interp rhs filled per step
  MatrixXd Gineq;                              // constant inequality normals
  std::vector<std::pair<int, int>> ineq_rows;  // (prediction step or -1, source row)
  std::vector<MatrixXd> F;                     // F_0..F_N
  std::vector<MatrixXd> Gu;                    // Gu_0..Gu_{N-1}
  MatrixXd A_K;

  int z_index(int i) const { return i * n; }
  int v_index(int i) const { return (horizon + 1) * n + i * m; }
};

struct SmpcConfig {
  LtiSystem sys;
  QuadraticStageCost cost;
  ChanceConstraintSpec chance;
  MatrixXd K;     // tube gain in the control law, cost, and tightening
  MatrixXd gain;  // feedback of FixedGain/LqrGain, unused otherwise
  TerminalIngredients term;
  int N = 0;
  TightenedConstraints tightened;
  double lambda_penalty = 0.0;
  ControllerVariant variant = ControllerVariant::Proposed;
  VarianceSequence variances;

  // filled by finalize()
  double cost_constant = 0.0;
  StepQpTemplate tpl;

  /// Validates the pieces against each other and precomputes the QP template
  /// and the constant trace part of the expected cost. Must be called before
  /// the config is used; the config is immutable afterwards.
  void finalize();
};

/// One solved controller step. For the QP variants the invariants of
/// problem (z_0 interpolation, nominal dynamics, tightened and terminal
/// membership) hold to 1e-7; j_star includes the constant trace terms of the
/// expected cost. Gain variants only fill u_applied.
struct MpcStepResult {
  MatrixXd v_star;  // m x N
  MatrixXd z_star;  // n x (N+1)
  double lambda_star = std::numeric_limits<double>::quiet_NaN();
  double j_star = std::numeric_limits<double>::quiet_NaN();
  VectorXd u_applied;
  bool feasible = false;
  long qp_iterations = 0;
};

/// Per-step QP together with the state-dependent constant of the expected
/// cost that the QP objective omits.
struct StepQp {
  QuadraticProgram qp;
  double mean_cost_offset = 0.0;
};

/// Assembles the QP for the measured state x, the threaded previous nominal
/// prediction z_prev = z*_{1|k-1}, and the absolute time k. pinned_lambda
/// adds an equality on lambda (the case-distinction and indirect variants).
StepQp build_step_qp(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev, long k,
                     std::optional<double> pinned_lambda = std::nullopt);

/// Sum of the trace terms: sum_{i<N} tr((Q + K'RK) Sigma_{x,i}) +
/// tr(P_f Sigma_{x,N}) with the covariances started at zero.
double expected_cost_constant(const SmpcConfig& cfg);

/// Solves one controller step. Infeasibility is reported through
/// feasible = false (callers decide whether that is a start-up error or an
/// invariant violation); numerical solver failures throw.
MpcStepResult solve_step(const SmpcConfig& cfg, const VectorXd& x, const VectorXd& z_prev, long k);

/// Shifted candidate for time k+1 built from the solution at time k:
/// lambda = 0, inputs shifted by one, the tail input K_f z_{N-1}, and the
/// terminal state rolled through A + B K_f.
struct Candidate {
  MatrixXd z;  // n x (N+1)
  MatrixXd v;  // m x N
  double lambda = 0.0;
};

Candidate shifted_candidate(const MpcStepResult& prev, const SmpcConfig& cfg, long k);

/// Largest violation of the constraints of the step problem at time k_next
/// by the candidate (its first column plays the role of z_prev).
double candidate_max_violation(const Candidate& cand, const SmpcConfig& cfg, long k_next);

}  // namespace smpc
