#include "smpc/model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace smpc {

namespace {

bool is_symmetric(const MatrixXd& M, double tol = 1e-9) {
  return (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + M.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()));
  return es.eigenvalues().minCoeff();
}

}  // namespace

void LtiSystem::validate() const {
  const int n = state_dim();
  if (A.rows() != A.cols()) throw std::invalid_argument("LtiSystem: A must be square");
  if (B.rows() != n) throw std::invalid_argument("LtiSystem: B row count must match A");
  if (sigma_w.rows() != n || sigma_w.cols() != n)
    throw std::invalid_argument("LtiSystem: sigma_w must be n x n");
  if (!A.allFinite() || !B.allFinite() || !sigma_w.allFinite())
    throw std::invalid_argument("LtiSystem: non-finite entries");
  if (!is_symmetric(sigma_w)) throw std::invalid_argument("LtiSystem: sigma_w must be symmetric");
  if (min_eigenvalue(sigma_w) <= 0.0)
    throw std::invalid_argument("LtiSystem: sigma_w must be positive definite");
}

void QuadraticStageCost::validate(int n, int m) const {
  if (Q.rows() != n || Q.cols() != n || q.size() != n)
    throw std::invalid_argument("QuadraticStageCost: Q/q dimension mismatch");
  if (R.rows() != m || R.cols() != m || r.size() != m)
    throw std::invalid_argument("QuadraticStageCost: R/r dimension mismatch");
  if (!is_symmetric(Q) || !is_symmetric(R))
    throw std::invalid_argument("QuadraticStageCost: Q and R must be symmetric");
  if (min_eigenvalue(Q) < -1e-9 || min_eigenvalue(R) < -1e-9)
    throw std::invalid_argument("QuadraticStageCost: Q and R must be PSD");
}

double QuadraticStageCost::evaluate(const VectorXd& x, const VectorXd& u) const {
  return x.dot(Q * x) + q.dot(x) + u.dot(R * u) + r.dot(u);
}

double Polytope::max_violation(const VectorXd& v) const {
  return (H * v - h).maxCoeff();
}

bool Polytope::contains(const VectorXd& v, double tol) const {
  return max_violation(v) <= tol;
}

void Polytope::validate() const {
  if (H.rows() < 1) throw std::invalid_argument("Polytope: needs at least one row");
  if (H.rows() != h.size()) throw std::invalid_argument("Polytope: H/h row mismatch");
  if (!H.allFinite() || !h.allFinite()) throw std::invalid_argument("Polytope: non-finite entries");
}

void ChanceConstraintSpec::validate() const {
  set.validate();
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("ChanceConstraintSpec: level must lie in (0,1)");
  if (allocation == RiskAllocation::PerRow) {
    if (row_levels.size() != set.rows())
      throw std::invalid_argument("ChanceConstraintSpec: one level per row required");
    if (!((row_levels.array() > 0.0).all() && (row_levels.array() < 1.0).all()))
      throw std::invalid_argument("ChanceConstraintSpec: row levels must lie in (0,1)");
  }
}

TerminalSet TerminalSet::origin(int n) { return singleton(VectorXd::Zero(n)); }

TerminalSet TerminalSet::singleton(const VectorXd& z) {
  TerminalSet t;
  t.kind = Kind::Point;
  t.point = z;
  return t;
}

TerminalSet TerminalSet::halfspaces(Polytope p) {
  TerminalSet t;
  t.kind = Kind::Halfspaces;
  t.poly = std::move(p);
  return t;
}

double spectral_radius(const MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spectral_radius: matrix must be square");
  Eigen::EigenSolver<MatrixXd> es(M, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double validate_closed_loop_stability(const LtiSystem& sys, const MatrixXd& K) {
  if (K.rows() != sys.input_dim() || K.cols() != sys.state_dim())
    throw std::invalid_argument("validate_closed_loop_stability: K must be m x n");
  return spectral_radius(sys.A + sys.B * K);
}

std::pair<MatrixXd, VectorXd> terminal_cost_from_lyapunov(const LtiSystem& sys,
                                                          const MatrixXd& K,
                                                          const QuadraticStageCost& cost) {
  const double rho = validate_closed_loop_stability(sys, K);
  if (rho >= 1.0) {
    std::ostringstream msg;
    msg << "terminal_cost_from_lyapunov: A+BK is not Schur (rho = " << rho << ")";
    throw std::invalid_argument(msg.str());
  }
  const MatrixXd A_K = sys.A + sys.B * K;
  const MatrixXd W = cost.Q + K.transpose() * cost.R * K;
  const VectorXd w = cost.q + K.transpose() * cost.r;

  constexpr double kTol = 1e-12;
  constexpr long kMaxIter = 1000000;
  MatrixXd Pf = MatrixXd::Zero(A_K.rows(), A_K.cols());
  for (long it = 0; it < kMaxIter; ++it) {
    MatrixXd next = A_K.transpose() * Pf * A_K + W;
    next = 0.5 * (next + next.transpose());
    const double diff = (next - Pf).cwiseAbs().maxCoeff();
    Pf = next;
    if (diff <= kTol) break;
  }
  VectorXd pf = VectorXd::Zero(A_K.rows());
  for (long it = 0; it < kMaxIter; ++it) {
    VectorXd next = A_K.transpose() * pf + w;
    const double diff = (next - pf).cwiseAbs().maxCoeff();
    pf = next;
    if (diff <= kTol) break;
  }

  const double res_P = (A_K.transpose() * Pf * A_K + W - Pf).cwiseAbs().maxCoeff();
  const double res_p = (A_K.transpose() * pf + w - pf).cwiseAbs().maxCoeff();
  if (res_P > 1e-9 || res_p > 1e-9)
    throw std::runtime_error("terminal_cost_from_lyapunov: fixed point did not converge");
  return {Pf, pf};
}

namespace {

// sup_{z in Xf} a'z <= bound, certified row-wise: a must be a nonnegative
// multiple of a single row of Xf, in which case the support value is that
// multiple of the row offset.
bool rowwise_support_bounded(const Polytope& Xf, const VectorXd& a, double bound,
                             std::string* why) {
  const double anorm = a.norm();
  if (anorm <= 1e-14) {
    if (bound < -1e-9) {
      if (why) *why = "zero row normal with negative offset";
      return false;
    }
    return true;
  }
  for (int j = 0; j < Xf.rows(); ++j) {
    const VectorXd f = Xf.H.row(j).transpose();
    const double fnorm = f.norm();
    if (fnorm <= 1e-14) continue;
    const double alpha = anorm / fnorm;
    if ((a - alpha * f).cwiseAbs().maxCoeff() <= 1e-10 * anorm) {
      if (alpha * Xf.h(j) <= bound + 1e-9) return true;
      if (why) {
        std::ostringstream msg;
        msg << "support value " << alpha * Xf.h(j) << " exceeds bound " << bound;
        *why = msg.str();
      }
      return false;
    }
  }
  if (why) *why = "row direction is not a nonnegative multiple of any Xf row";
  return false;
}

}  // namespace

AdmissibilityReport check_terminal_admissibility(const TerminalIngredients& term,
                                                 const LtiSystem& sys,
                                                 const Polytope& zbar_inf) {
  const MatrixXd A_cl = sys.A + sys.B * term.Kf;
  const int n = sys.state_dim();

  auto member_of_zbar = [&](const VectorXd& z) {
    VectorXd zu(n + sys.input_dim());
    zu << z, term.Kf * z;
    return zbar_inf.max_violation(zu);
  };

  AdmissibilityReport rep;
  if (term.Xf.kind == TerminalSet::Kind::Point) {
    const VectorXd& z = term.Xf.point;
    const double c_viol = member_of_zbar(z);
    const double inv_viol = (A_cl * z - z).cwiseAbs().maxCoeff();
    rep.ok = c_viol <= 1e-9 && inv_viol <= 1e-9;
    if (!rep.ok) {
      std::ostringstream msg;
      msg << "point terminal set: constraint violation " << c_viol << ", invariance residual "
          << inv_viol;
      rep.detail = msg.str();
    }
    return rep;
  }

  if (!term.Xf.vertices.empty()) {
    for (const VectorXd& z : term.Xf.vertices) {
      if (member_of_zbar(z) > 1e-9) {
        rep.detail = "vertex violates the tightened constraint set";
        return rep;
      }
      if (term.Xf.poly.max_violation(A_cl * z) > 1e-9) {
        rep.detail = "vertex image leaves the terminal set";
        return rep;
      }
    }
    rep.ok = true;
    return rep;
  }

  // Half-space only terminal set: verify row by row via support functions.
  const Polytope& Xf = term.Xf.poly;
  std::string why;
  for (int i = 0; i < zbar_inf.rows(); ++i) {
    const VectorXd a = zbar_inf.H.row(i).head(n).transpose() +
                       term.Kf.transpose() * zbar_inf.H.row(i).tail(sys.input_dim()).transpose();
    if (!rowwise_support_bounded(Xf, a, zbar_inf.h(i), &why)) {
      rep.detail = "tightened-set row " + std::to_string(i) + ": " + why;
      return rep;
    }
  }
  for (int i = 0; i < Xf.rows(); ++i) {
    const VectorXd a = A_cl.transpose() * Xf.H.row(i).transpose();
    if (!rowwise_support_bounded(Xf, a, Xf.h(i), &why)) {
      rep.detail = "invariance row " + std::to_string(i) + ": " + why;
      if (why == "row direction is not a nonnegative multiple of any Xf row")
        throw std::invalid_argument(
            "check_terminal_admissibility: unbounded terminal set is not row-wise verifiable");
      return rep;
    }
  }
  rep.ok = true;
  return rep;
}

}  // namespace smpc
