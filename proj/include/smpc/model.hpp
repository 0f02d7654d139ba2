#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace smpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Distribution of the additive disturbance w. Both laws are zero-mean and
/// symmetric; UniformBox is a uniform distribution over a symmetric
/// parallelotope scaled so that its covariance equals sigma_w.
enum class DisturbanceLaw { Gaussian, UniformBox };

/// Discrete-time plant x(k+1) = A x(k) + B u(k) + w(k) with i.i.d. noise of
/// covariance sigma_w.
struct LtiSystem {
  MatrixXd A;
  MatrixXd B;
  MatrixXd sigma_w;
  DisturbanceLaw law = DisturbanceLaw::Gaussian;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }

  /// Throws std::invalid_argument on dimension mismatch or a sigma_w that is
  /// not symmetric positive definite.
  void validate() const;
};

/// Stage cost l(x,u) = x'Qx + q'x + u'Ru + r'u with Q, R symmetric PSD.
struct QuadraticStageCost {
  MatrixXd Q;
  VectorXd q;
  MatrixXd R;
  VectorXd r;

  void validate(int n, int m) const;
  double evaluate(const VectorXd& x, const VectorXd& u) const;
};

/// Half-space set {v : H v <= h}. Used for the joint (x,u) constraint set,
/// its tightened versions, and state-only sets (dim = n).
struct Polytope {
  MatrixXd H;
  VectorXd h;

  int rows() const { return static_cast<int>(H.rows()); }
  int dim() const { return static_cast<int>(H.cols()); }

  /// Largest violation max_i (H v - h)_i; <= 0 means v is a member.
  double max_violation(const VectorXd& v) const;
  bool contains(const VectorXd& v, double tol = 1e-9) const;
  bool contains_origin(double tol = 1e-12) const { return (h.array() >= -tol).all(); }

  void validate() const;
};

enum class RiskAllocation { Joint, PerRow };

/// Chance constraint P[(x,u) in set] >= level. Joint allocation applies the
/// single level to every row; PerRow carries one level per half-space.
struct ChanceConstraintSpec {
  Polytope set;
  double level = 0.0;
  RiskAllocation allocation = RiskAllocation::Joint;
  VectorXd row_levels;  // only used with PerRow

  double row_level(int i) const {
    return allocation == RiskAllocation::Joint ? level : row_levels(i);
  }
  void validate() const;
};

/// Terminal set, either a single point (stored as equality rows in the QP)
/// or a half-space polytope in state space. Bounded polytopes may carry an
/// explicit vertex list for admissibility checks.
struct TerminalSet {
  enum class Kind { Point, Halfspaces };
  Kind kind = Kind::Point;
  VectorXd point;                  // Kind::Point
  Polytope poly;                   // Kind::Halfspaces
  std::vector<VectorXd> vertices;  // optional, Kind::Halfspaces only

  static TerminalSet origin(int n);
  static TerminalSet singleton(const VectorXd& z);
  static TerminalSet halfspaces(Polytope p);
};

/// Terminal set, terminal gain, and terminal cost V_f(x) = x'P_f x + p_f'x.
struct TerminalIngredients {
  TerminalSet Xf;
  MatrixXd Kf;
  MatrixXd Pf;
  VectorXd pf;
};

struct AdmissibilityReport {
  bool ok = false;
  std::string detail;
  explicit operator bool() const { return ok; }
};

/// Largest absolute eigenvalue of a square matrix.
double spectral_radius(const MatrixXd& M);

/// Returns rho(A + B K). Callers treat rho >= 1 as a configuration error
/// whenever the gain feeds a state-error dependent tightening.
double validate_closed_loop_stability(const LtiSystem& sys, const MatrixXd& K);

/// Solves the Lyapunov fixed points
///   P_f = A_K' P_f A_K + Q + K'RK,   p_f = A_K' p_f + q + K'r,
/// by iterating the recursions to absolute tolerance 1e-12. Requires
/// rho(A+BK) < 1.
std::pair<MatrixXd, VectorXd> terminal_cost_from_lyapunov(const LtiSystem& sys,
                                                          const MatrixXd& K,
                                                          const QuadraticStageCost& cost);

/// Checks admissibility of the terminal ingredients
/// against the limiting tightened set: every z in Xf must satisfy
/// (z, Kf z) in zbar_inf and (A + B Kf) z in Xf. Point sets are checked
/// directly, vertex-represented polytopes vertex by vertex, and pure
/// half-space sets row by row through a support-function comparison.
AdmissibilityReport check_terminal_admissibility(const TerminalIngredients& term,
                                                 const LtiSystem& sys,
                                                 const Polytope& zbar_inf);

}  // namespace smpc
