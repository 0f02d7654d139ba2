#pragma once

#include <Eigen/Dense>

#include <limits>

namespace smpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class QpStatus { Optimal, Infeasible, MaxIter };

/// Convex QP in standard form:
///   min 0.5 x'Px + q'x
///   s.t. G x <= h,  Aeq x = beq,  lb <= x <= ub,
/// with P symmetric PSD. Absent blocks may be left empty (0 rows); bounds
/// use +-infinity for "none".
struct QuadraticProgram {
  MatrixXd P;
  VectorXd q;
  MatrixXd G;
  VectorXd h;
  MatrixXd Aeq;
  VectorXd beq;
  VectorXd lb;
  VectorXd ub;

  int dim() const { return static_cast<int>(q.size()); }

  static QuadraticProgram empty(int d);

  /// Symmetrizes P in place and checks dimensions and positive
  /// semi-definiteness (smallest eigenvalue >= -1e-9).
  void validate();
};

struct QpSolution {
  QpStatus status = QpStatus::MaxIter;
  VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double max_primal_violation = std::numeric_limits<double>::quiet_NaN();
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();
  long iterations = 0;
};

struct QpOptions {
  double primal_tol = 1e-8;        // feasibility classification
  double stationarity_tol = 1e-6;  // scaled by (1 + ||q||_inf)
  long max_iter = 100000;
};

/// Primal active-set solver for small dense convex QPs. A phase-1 slack LP
/// produces the initial point and certifies infeasibility (minimum total
/// violation below 1e-8 counts as feasible, the reported minimum for an
/// Infeasible instance is at least 1e-7 on well-posed data). Semi-definite
/// objectives are handled by a Tikhonov ridge of 1e-10 applied to the
/// factorizations only; the reported objective always uses the unmodified P.
/// Pivoting ties break on the lowest constraint index, so identical inputs
/// produce identical outputs.
QpSolution solve_qp(const QuadraticProgram& qp, const QpOptions& opt = {});

/// Phase-1 only: true iff the minimum total constraint violation is <= 1e-8.
/// Agrees with the status reported by solve_qp on the same instance.
bool check_feasible(const QuadraticProgram& qp, const QpOptions& opt = {});

}  // namespace smpc
