#include "smpc/qp.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace smpc {

namespace {

constexpr double kRidge = 1e-10;
constexpr double kInfeasibleTotal = 1e-8;  // phase-1 decision threshold

double max_abs(const VectorXd& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }

struct ActiveSetResult {
  VectorXd x;
  VectorXd mult_in;  // one per inequality row, zero off the working set
  VectorXd mult_eq;  // one per (selected) equality row
  bool converged = false;
  long iterations = 0;
};

// Primal active-set iteration on
//   min 0.5 x'Px + q'x  s.t.  Ain x <= bin,  Aeq x = beq,
// from a feasible starting point. Equality rows stay in the working set for
// the whole run; every equality-constrained subproblem is solved through an
// LU factorization of the ridge-regularized KKT system.
class ActiveSetCore {
 public:
  ActiveSetCore(const MatrixXd& P, const VectorXd& q, const MatrixXd& Ain, const VectorXd& bin,
                const MatrixXd& Aeq, const VectorXd& beq, long max_iter)
      : P_(P),
        q_(q),
        Ain_(Ain),
        bin_(bin),
        Aeq_(Aeq),
        beq_(beq),
        max_iter_(max_iter),
        d_(static_cast<int>(q.size())),
        n_eq_(static_cast<int>(beq.size())),
        n_in_(static_cast<int>(bin.size())) {
    row_norm_.resize(n_in_);
    for (int i = 0; i < n_in_; ++i) row_norm_(i) = Ain_.row(i).cwiseAbs().maxCoeff();
    mu_tol_ = 1e-9 * (1.0 + q_.cwiseAbs().maxCoeff());
  }

  ActiveSetResult run(const VectorXd& x0) {
    ActiveSetResult res;
    VectorXd x = x0;
    std::vector<int> W = initial_working_set(x);
    std::vector<char> in_W(static_cast<size_t>(n_in_), 0);
    for (int i : W) in_W[static_cast<size_t>(i)] = 1;

    VectorXd xhat, mult_eq, mult_W;
    long degenerate_run = 0;
    bool bland = false;

    for (long iter = 1; iter <= max_iter_; ++iter) {
      res.iterations = iter;
      if (!solve_eqp(W, &xhat, &mult_eq, &mult_W)) return res;  // singular KKT

      const VectorXd dir = xhat - x;
      const double step_scale = 1.0 + x.cwiseAbs().maxCoeff();
      if (dir.cwiseAbs().maxCoeff() <= 1e-11 * step_scale) {
        // At the optimum of the current face: examine working multipliers.
        int drop = -1;
        double worst = -mu_tol_;
        for (size_t j = 0; j < W.size(); ++j) {
          const double mu = mult_W(static_cast<long>(j));
          if (bland) {
            if (mu < -mu_tol_) {
              drop = static_cast<int>(j);
              break;
            }
          } else if (mu < worst) {
            worst = mu;
            drop = static_cast<int>(j);
          }
        }
        if (drop < 0) {
          res.x = xhat;
          res.mult_eq = mult_eq;
          res.mult_in = VectorXd::Zero(n_in_);
          for (size_t j = 0; j < W.size(); ++j)
            res.mult_in(W[j]) = mult_W(static_cast<long>(j));
          res.converged = true;
          return res;
        }
        in_W[static_cast<size_t>(W[static_cast<size_t>(drop)])] = 0;
        W.erase(W.begin() + drop);
        continue;
      }

      // Ratio test against the rows outside the working set.
      double alpha = 1.0;
      int blocker = -1;
      for (int i = 0; i < n_in_; ++i) {
        if (in_W[static_cast<size_t>(i)]) continue;
        const double ad = Ain_.row(i).dot(dir);
        if (ad <= 1e-13 * (row_norm_(i) * dir.cwiseAbs().maxCoeff() + 1.0)) continue;
        double slack = bin_(i) - Ain_.row(i).dot(x);
        if (slack < 0.0) slack = 0.0;
        const double ratio = slack / ad;
        if (ratio < alpha - 1e-15) {
          alpha = ratio;
          blocker = i;
        }
      }

      x += alpha * dir;
      if (blocker >= 0) {
        W.push_back(blocker);
        in_W[static_cast<size_t>(blocker)] = 1;
      }
      if (alpha <= 1e-14) {
        if (++degenerate_run > 2L * (n_in_ + d_) + 20) bland = true;
      } else {
        degenerate_run = 0;
      }
    }
    res.x = x;
    return res;  // iteration cap
  }

 private:
  // Rows active at x, selected greedily by ascending index while linearly
  // independent of the equality rows and of each other.
  std::vector<int> initial_working_set(const VectorXd& x) const {
    std::vector<int> W;
    MatrixXd basis(d_, std::min(d_, n_eq_ + n_in_));
    int nb = 0;
    auto try_add = [&](const VectorXd& row) {
      if (nb >= d_) return false;
      VectorXd v = row;
      for (int rep = 0; rep < 2; ++rep)
        for (int j = 0; j < nb; ++j) v -= basis.col(j).dot(v) * basis.col(j);
      const double nrm = v.norm();
      if (nrm <= 1e-10 * (1.0 + row.norm())) return false;
      basis.col(nb++) = v / nrm;
      return true;
    };
    for (int i = 0; i < n_eq_; ++i) try_add(Aeq_.row(i).transpose());
    for (int i = 0; i < n_in_; ++i) {
      const double resid = Ain_.row(i).dot(x) - bin_(i);
      if (std::abs(resid) <= 1e-9 * (1.0 + row_norm_(i))) {
        if (try_add(Ain_.row(i).transpose())) W.push_back(i);
      }
    }
    return W;
  }

  bool solve_eqp(const std::vector<int>& W, VectorXd* xhat, VectorXd* mult_eq,
                 VectorXd* mult_W) const {
    const int r = n_eq_ + static_cast<int>(W.size());
    MatrixXd kkt = MatrixXd::Zero(d_ + r, d_ + r);
    kkt.topLeftCorner(d_, d_) = P_;
    kkt.diagonal().head(d_).array() += kRidge;
    VectorXd rhs(d_ + r);
    rhs.head(d_) = -q_;
    for (int i = 0; i < n_eq_; ++i) {
      kkt.block(d_ + i, 0, 1, d_) = Aeq_.row(i);
      kkt.block(0, d_ + i, d_, 1) = Aeq_.row(i).transpose();
      rhs(d_ + i) = beq_(i);
    }
    for (size_t j = 0; j < W.size(); ++j) {
      const int row = d_ + n_eq_ + static_cast<int>(j);
      kkt.block(row, 0, 1, d_) = Ain_.row(W[j]);
      kkt.block(0, row, d_, 1) = Ain_.row(W[j]).transpose();
      rhs(row) = bin_(W[j]);
    }
    const VectorXd sol = kkt.partialPivLu().solve(rhs);
    if (!sol.allFinite()) return false;
    *xhat = sol.head(d_);
    *mult_eq = sol.segment(d_, n_eq_);
    *mult_W = sol.tail(static_cast<long>(W.size()));
    return true;
  }

  const MatrixXd& P_;
  const VectorXd& q_;
  const MatrixXd& Ain_;
  const VectorXd& bin_;
  const MatrixXd& Aeq_;
  const VectorXd& beq_;
  const long max_iter_;
  const int d_;
  const int n_eq_;
  const int n_in_;
  VectorXd row_norm_;
  double mu_tol_ = 1e-9;
};

// All inequality material of a QP folded into a single A x <= b block:
// G rows first, then finite upper bounds, then finite lower bounds.
struct IneqBlock {
  MatrixXd A;
  VectorXd b;
};

IneqBlock fold_inequalities(const QuadraticProgram& qp) {
  const int d = qp.dim();
  const int mg = static_cast<int>(qp.G.rows());
  int n_ub = 0, n_lb = 0;
  for (int i = 0; i < d; ++i) {
    if (std::isfinite(qp.ub(i))) ++n_ub;
    if (std::isfinite(qp.lb(i))) ++n_lb;
  }
  IneqBlock blk;
  blk.A = MatrixXd::Zero(mg + n_ub + n_lb, d);
  blk.b = VectorXd::Zero(mg + n_ub + n_lb);
  blk.A.topRows(mg) = qp.G;
  blk.b.head(mg) = qp.h;
  int row = mg;
  for (int i = 0; i < d; ++i) {
    if (std::isfinite(qp.ub(i))) {
      blk.A(row, i) = 1.0;
      blk.b(row) = qp.ub(i);
      ++row;
    }
  }
  for (int i = 0; i < d; ++i) {
    if (std::isfinite(qp.lb(i))) {
      blk.A(row, i) = -1.0;
      blk.b(row) = -qp.lb(i);
      ++row;
    }
  }
  return blk;
}

// Equality rows reduced to an independent subset (duplicates carry no
// information once consistency is established through the least-squares
// residual of the full system).
struct EqBlock {
  MatrixXd A;
  VectorXd b;
  VectorXd x0;            // minimum-norm least-squares solution
  double residual = 0.0;  // inconsistency of the full system
};

EqBlock reduce_equalities(const QuadraticProgram& qp) {
  EqBlock blk;
  const int d = qp.dim();
  const int ne = static_cast<int>(qp.Aeq.rows());
  if (ne == 0) {
    blk.A = MatrixXd::Zero(0, d);
    blk.b = VectorXd::Zero(0);
    blk.x0 = VectorXd::Zero(d);
    return blk;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(qp.Aeq);
  blk.x0 = cod.solve(qp.beq);
  blk.residual = (qp.Aeq * blk.x0 - qp.beq).cwiseAbs().maxCoeff();

  std::vector<int> keep;
  MatrixXd basis(d, std::min(d, ne));
  int nb = 0;
  for (int i = 0; i < ne; ++i) {
    VectorXd v = qp.Aeq.row(i).transpose();
    const double nrm0 = v.norm();
    for (int rep = 0; rep < 2; ++rep)
      for (int j = 0; j < nb; ++j) v -= basis.col(j).dot(v) * basis.col(j);
    if (v.norm() > 1e-10 * (1.0 + nrm0) && nb < d) {
      basis.col(nb++) = v / v.norm();
      keep.push_back(i);
    }
  }
  blk.A = MatrixXd::Zero(static_cast<long>(keep.size()), d);
  blk.b = VectorXd::Zero(static_cast<long>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j) {
    blk.A.row(static_cast<long>(j)) = qp.Aeq.row(keep[j]);
    blk.b(static_cast<long>(j)) = qp.beq(keep[j]);
  }
  return blk;
}

double total_violation(const IneqBlock& in, const MatrixXd& Aeq, const VectorXd& beq,
                       const VectorXd& x) {
  double total = in.b.size() > 0 ? (in.A * x - in.b).cwiseMax(0.0).sum() : 0.0;
  if (beq.size() > 0) total += (Aeq * x - beq).cwiseAbs().sum();
  return total;
}

struct Phase1Outcome {
  VectorXd x;
  double min_total_violation = 0.0;
  bool hit_cap = false;
  long iterations = 0;
};

// Minimizes the total violation sum_j s_j with one slack per initially
// violated row; rows already satisfied stay hard. The start point
// (x0, s0 = violations) is feasible by construction.
Phase1Outcome run_phase1(const IneqBlock& in, const EqBlock& eq, const VectorXd& x0,
                         const QpOptions& opt) {
  Phase1Outcome out;
  const int d = static_cast<int>(x0.size());
  const int n_in = static_cast<int>(in.b.size());

  std::vector<int> violated;
  for (int i = 0; i < n_in; ++i)
    if (in.A.row(i).dot(x0) - in.b(i) > opt.primal_tol) violated.push_back(i);
  if (violated.empty()) {
    out.x = x0;
    out.min_total_violation = 0.0;
    return out;
  }

  const int nv = static_cast<int>(violated.size());
  const int dd = d + nv;
  MatrixXd A1 = MatrixXd::Zero(n_in + nv, dd);
  VectorXd b1 = VectorXd::Zero(n_in + nv);
  A1.topLeftCorner(n_in, d) = in.A;
  b1.head(n_in) = in.b;
  for (int t = 0; t < nv; ++t) {
    A1(violated[static_cast<size_t>(t)], d + t) = -1.0;  // a x - s <= b
    A1(n_in + t, d + t) = -1.0;                          // s >= 0
  }
  MatrixXd Aeq1 = MatrixXd::Zero(eq.A.rows(), dd);
  Aeq1.leftCols(d) = eq.A;

  MatrixXd P1 = MatrixXd::Zero(dd, dd);
  VectorXd q1 = VectorXd::Zero(dd);
  q1.tail(nv).setOnes();

  VectorXd start = VectorXd::Zero(dd);
  start.head(d) = x0;
  for (int t = 0; t < nv; ++t)
    start(d + t) = in.A.row(violated[static_cast<size_t>(t)]).dot(x0) -
                   in.b(violated[static_cast<size_t>(t)]);

  ActiveSetCore core(P1, q1, A1, b1, Aeq1, eq.b, opt.max_iter);
  ActiveSetResult res = core.run(start);
  out.iterations = res.iterations;
  out.hit_cap = !res.converged;
  out.x = res.x.head(d);
  out.min_total_violation = total_violation(in, eq.A, eq.b, out.x);
  return out;
}

void validate_dims(const QuadraticProgram& qp) {
  const int d = qp.dim();
  if (d <= 0) throw std::invalid_argument("solve_qp: empty decision vector");
  if (qp.P.rows() != d || qp.P.cols() != d)
    throw std::invalid_argument("solve_qp: P dimension mismatch");
  if (qp.G.rows() != qp.h.size() || (qp.G.rows() > 0 && qp.G.cols() != d))
    throw std::invalid_argument("solve_qp: G/h dimension mismatch");
  if (qp.Aeq.rows() != qp.beq.size() || (qp.Aeq.rows() > 0 && qp.Aeq.cols() != d))
    throw std::invalid_argument("solve_qp: Aeq/beq dimension mismatch");
  if (qp.lb.size() != d || qp.ub.size() != d)
    throw std::invalid_argument("solve_qp: bound dimension mismatch");
}

// Fills absent blocks with right-sized empties so the solver core can treat
// every instance uniformly.
QuadraticProgram normalized(const QuadraticProgram& qp) {
  QuadraticProgram out = qp;
  const int d = out.dim();
  if (out.G.size() == 0 && out.G.rows() == 0) out.G = MatrixXd::Zero(0, d);
  if (out.h.size() == 0) out.h = VectorXd::Zero(0);
  if (out.Aeq.size() == 0 && out.Aeq.rows() == 0) out.Aeq = MatrixXd::Zero(0, d);
  if (out.beq.size() == 0) out.beq = VectorXd::Zero(0);
  if (out.lb.size() == 0) out.lb = VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  if (out.ub.size() == 0) out.ub = VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  validate_dims(out);
  return out;
}

}  // namespace

QuadraticProgram QuadraticProgram::empty(int d) {
  QuadraticProgram qp;
  qp.P = MatrixXd::Zero(d, d);
  qp.q = VectorXd::Zero(d);
  qp.G = MatrixXd::Zero(0, d);
  qp.h = VectorXd::Zero(0);
  qp.Aeq = MatrixXd::Zero(0, d);
  qp.beq = VectorXd::Zero(0);
  qp.lb = VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  qp.ub = VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  return qp;
}

void QuadraticProgram::validate() {
  *this = normalized(*this);
  P = 0.5 * (P + P.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  if (es.eigenvalues().minCoeff() < -1e-9)
    throw std::invalid_argument("QuadraticProgram: P must be positive semi-definite");
}

QpSolution solve_qp(const QuadraticProgram& raw, const QpOptions& opt) {
  const QuadraticProgram qp = normalized(raw);
  const MatrixXd P = 0.5 * (qp.P + qp.P.transpose());
  const IneqBlock in = fold_inequalities(qp);
  const EqBlock eq = reduce_equalities(qp);

  QpSolution sol;
  if (eq.residual > opt.primal_tol * (1.0 + max_abs(qp.beq))) {
    sol.status = QpStatus::Infeasible;
    sol.x = eq.x0;
    sol.max_primal_violation = eq.residual;
    return sol;
  }

  Phase1Outcome p1 = run_phase1(in, eq, eq.x0, opt);
  sol.iterations = p1.iterations;
  if (p1.hit_cap) {
    sol.status = QpStatus::MaxIter;
    sol.x = p1.x;
    return sol;
  }
  if (p1.min_total_violation > kInfeasibleTotal) {
    sol.status = QpStatus::Infeasible;
    sol.x = p1.x;
    sol.max_primal_violation =
        in.b.size() > 0 ? (in.A * p1.x - in.b).cwiseMax(0.0).maxCoeff() : 0.0;
    return sol;
  }

  ActiveSetCore core(P, qp.q, in.A, in.b, eq.A, eq.b, opt.max_iter - p1.iterations);
  ActiveSetResult res = core.run(p1.x);
  sol.iterations += res.iterations;
  sol.x = res.x;
  if (!res.converged) {
    sol.status = QpStatus::MaxIter;
    return sol;
  }

  sol.objective = 0.5 * res.x.dot(P * res.x) + qp.q.dot(res.x);
  double viol = 0.0;
  if (in.b.size() > 0) viol = (in.A * res.x - in.b).maxCoeff();
  if (eq.b.size() > 0) viol = std::max(viol, (qp.Aeq * res.x - qp.beq).cwiseAbs().maxCoeff());
  sol.max_primal_violation = std::max(viol, 0.0);

  VectorXd grad = P * res.x + qp.q;
  if (in.b.size() > 0) grad += in.A.transpose() * res.mult_in;
  if (eq.b.size() > 0) grad += eq.A.transpose() * res.mult_eq;
  sol.kkt_residual = grad.cwiseAbs().maxCoeff();

  const bool kkt_ok = sol.kkt_residual <= opt.stationarity_tol * (1.0 + qp.q.cwiseAbs().maxCoeff());
  const bool primal_ok = sol.max_primal_violation <= 1e-7;
  sol.status = (kkt_ok && primal_ok) ? QpStatus::Optimal : QpStatus::MaxIter;
  if (sol.status != QpStatus::Optimal) sol.objective = std::numeric_limits<double>::quiet_NaN();
  return sol;
}

bool check_feasible(const QuadraticProgram& raw, const QpOptions& opt) {
  const QuadraticProgram qp = normalized(raw);
  const IneqBlock in = fold_inequalities(qp);
  const EqBlock eq = reduce_equalities(qp);
  if (eq.residual > opt.primal_tol * (1.0 + max_abs(qp.beq))) return false;
  Phase1Outcome p1 = run_phase1(in, eq, eq.x0, opt);
  if (p1.hit_cap) throw std::runtime_error("check_feasible: iteration cap reached");
  return p1.min_total_violation <= kInfeasibleTotal;
}

}  // namespace smpc
