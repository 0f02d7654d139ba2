#include "smpc/qp.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace smpc;

namespace {

QuadraticProgram random_instance(std::mt19937_64& rng, bool* expect_infeasible) {
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> dim_dist(2, 10);
  const int d = dim_dist(rng);
  QuadraticProgram qp = QuadraticProgram::empty(d);

  const int kind = static_cast<int>(rng() % 3);
  if (kind > 0) {
    MatrixXd M(d, d);
    for (int i = 0; i < d * d; ++i) M(i / d, i % d) = nd(rng);
    qp.P = M.transpose() * M;
    if (kind == 2) {
      // rank-deficient PSD
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(qp.P);
      VectorXd ev = es.eigenvalues();
      for (int i = 0; i < d / 2; ++i) ev(i) = 0.0;
      qp.P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }
  }
  for (int i = 0; i < d; ++i) qp.q(i) = nd(rng);

  const int mg = d + 3;
  qp.G.resize(mg, d);
  qp.h.resize(mg);
  VectorXd x_feas(d);
  for (int i = 0; i < d; ++i) x_feas(i) = nd(rng);
  for (int i = 0; i < mg; ++i) {
    for (int j = 0; j < d; ++j) qp.G(i, j) = nd(rng);
    qp.h(i) = qp.G.row(i).dot(x_feas) + std::abs(nd(rng));
  }
  qp.lb.setConstant(-50.0);
  qp.ub.setConstant(50.0);

  *expect_infeasible = rng() % 7 == 0;
  if (*expect_infeasible) {
    MatrixXd G2(mg + 2, d);
    VectorXd h2(mg + 2);
    G2.topRows(mg) = qp.G;
    h2.head(mg) = qp.h;
    G2.row(mg) = qp.G.row(0);
    h2(mg) = qp.h(0);
    G2.row(mg + 1) = -qp.G.row(0);
    h2(mg + 1) = -qp.h(0) - 1.0;
    qp.G = G2;
    qp.h = h2;
  }
  return qp;
}

}  // namespace

TEST_CASE("active bound") {
  QuadraticProgram qp = QuadraticProgram::empty(1);
  qp.P << 2.0;  // objective x^2
  qp.lb << 1.0;
  const QpSolution s = solve_qp(qp);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("one-step linear program") {
  // min v  s.t.  0.75 z + v >= -0.6493,  z = 0
  QuadraticProgram qp = QuadraticProgram::empty(2);
  qp.q << 0.0, 1.0;
  qp.G = (MatrixXd(1, 2) << -0.75, -1.0).finished();
  qp.h = (VectorXd(1) << 0.6493).finished();
  qp.Aeq = (MatrixXd(1, 2) << 1.0, 0.0).finished();
  qp.beq = VectorXd::Zero(1);
  const QpSolution s = solve_qp(qp);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.x(1) == doctest::Approx(-0.6493).epsilon(1e-9));
}

TEST_CASE("symmetric equality projection") {
  QuadraticProgram qp = QuadraticProgram::empty(2);
  qp.P.setIdentity();
  qp.Aeq = (MatrixXd(1, 2) << 1.0, 1.0).finished();
  qp.beq = (VectorXd(1) << 2.0).finished();
  const QpSolution s = solve_qp(qp);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.x(1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("infeasibility detection") {
  QuadraticProgram qp = QuadraticProgram::empty(1);
  qp.P << 2.0;
  qp.lb << 1.0;
  qp.ub << 0.0;
  CHECK(solve_qp(qp).status == QpStatus::Infeasible);
  CHECK_FALSE(check_feasible(qp));

  QuadraticProgram ok = QuadraticProgram::empty(1);
  ok.P << 2.0;
  ok.lb << 0.0;
  ok.ub << 1.0;
  CHECK(check_feasible(ok));

  // inconsistent equalities
  QuadraticProgram eqbad = QuadraticProgram::empty(2);
  eqbad.P.setIdentity();
  eqbad.Aeq = (MatrixXd(2, 2) << 1, 1, 1, 1).finished();
  eqbad.beq = (VectorXd(2) << 1.0, 2.0).finished();
  CHECK(solve_qp(eqbad).status == QpStatus::Infeasible);
  CHECK_FALSE(check_feasible(eqbad));
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(5);
  bool inf = false;
  for (int t = 0; t < 20; ++t) {
    const QuadraticProgram qp = random_instance(rng, &inf);
    const QpSolution a = solve_qp(qp);
    const QpSolution b = solve_qp(qp);
    CHECK(a.status == b.status);
    if (a.status == QpStatus::Optimal) {
      CHECK(a.objective == b.objective);  // bitwise
      CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("random instances: kkt, projection oracle, phase-1 agreement") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  int optimal = 0, infeasible = 0;
  for (int t = 0; t < 300; ++t) {
    bool expect_infeasible = false;
    const QuadraticProgram qp = random_instance(rng, &expect_infeasible);
    const QpSolution s = solve_qp(qp);
    const bool feas = check_feasible(qp);
    CHECK((s.status == QpStatus::Infeasible) == !feas);
    if (expect_infeasible) {
      CHECK(s.status == QpStatus::Infeasible);
      ++infeasible;
      continue;
    }
    REQUIRE(s.status == QpStatus::Optimal);
    ++optimal;
    CHECK(s.max_primal_violation <= 1e-7);
    CHECK(s.kkt_residual <= 1e-6 * (1.0 + qp.q.cwiseAbs().maxCoeff()));

    // objective cannot improve along random feasible directions
    const int d = qp.dim();
    for (int k = 0; k < 30; ++k) {
      VectorXd dir(d);
      for (int i = 0; i < d; ++i) dir(i) = nd(rng);
      dir.normalize();
      const VectorXd y = s.x + 1e-5 * dir;
      double viol = (qp.G * y - qp.h).maxCoeff();
      viol = std::max(viol, (y - qp.ub).maxCoeff());
      viol = std::max(viol, (qp.lb - y).maxCoeff());
      if (viol <= 1e-12) {
        const double fy = 0.5 * y.dot(qp.P * y) + qp.q.dot(y);
        CHECK(fy >= s.objective - 1e-9 * (1.0 + std::abs(s.objective)));
      }
    }
  }
  CHECK(optimal > 200);
  CHECK(infeasible > 20);
}

TEST_CASE("iteration cap surfaces as MaxIter") {
  QuadraticProgram qp = QuadraticProgram::empty(3);
  qp.P.setIdentity();
  qp.q << 1.0, -2.0, 0.5;
  qp.G = MatrixXd::Random(5, 3);
  qp.h = VectorXd::Constant(5, 10.0);
  QpOptions opt;
  opt.max_iter = 1;
  CHECK(solve_qp(qp, opt).status == QpStatus::MaxIter);
}

TEST_CASE("validate rejects indefinite objectives") {
  QuadraticProgram qp = QuadraticProgram::empty(2);
  qp.P << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(qp.validate(), std::invalid_argument);
}
