#include "smpc/sim.hpp"

#include "smpc/config.hpp"

#include <doctest.h>

#include <cmath>

using namespace smpc;

namespace {

VectorXd v1(double v) { return (VectorXd(1) << v).finished(); }

std::vector<VectorXd> zeros(int T) { return std::vector<VectorXd>(T, VectorXd::Zero(1)); }

}  // namespace

TEST_CASE("splitmix stream statistics") {
  RolloutRng rng(123, 0);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::abs(sum / n) <= 0.01);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));

  // distinct rollout indices give distinct streams
  RolloutRng a(5, 1), b(5, 2);
  bool differ = false;
  for (int i = 0; i < 8; ++i) differ |= a.next_u64() != b.next_u64();
  CHECK(differ);
}

TEST_CASE("uniform-box disturbances match the requested covariance") {
  LtiSystem sys{(MatrixXd(1, 1) << 1.0).finished(), (MatrixXd(1, 1) << 1.0).finished(),
                (MatrixXd(1, 1) << 2.5).finished(), DisturbanceLaw::UniformBox};
  DisturbanceSampler sampler(sys);
  RolloutRng rng(4, 0);
  double sq = 0.0, biggest = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double w = sampler.sample(rng)(0);
    sq += w * w;
    biggest = std::max(biggest, std::abs(w));
  }
  CHECK(sq / n == doctest::Approx(2.5).epsilon(0.02));
  CHECK(biggest <= std::sqrt(3.0 * 2.5) + 1e-12);  // bounded support
}

TEST_CASE("noise-free deadbeat rollout stays at the origin") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::LqrGain);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 10, zeros(10));
  for (const StepLog& s : rec.steps) {
    CHECK(s.x(0) == 0.0);
    CHECK(s.u(0) == 0.0);
    CHECK(s.satisfied);
  }
  CHECK(rec.x_final(0) == 0.0);
}

TEST_CASE("noise-free proposed rollout has zero cost at the origin") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::Proposed);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 10, zeros(10));
  for (const StepLog& s : rec.steps) {
    CHECK(std::abs(s.u(0)) <= 1e-7);
    CHECK(s.lambda >= -1e-12);
    CHECK(s.lambda <= 1.0 + 1e-12);
    CHECK(std::abs(s.stage_cost) <= 1e-12);
  }
}

TEST_CASE("seeded rollouts replay identically") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::Proposed);
  RolloutRng r1(99, 3), r2(99, 3);
  const RolloutRecord a = rollout(cfg, v1(0.0), 12, r1);
  const RolloutRecord b = rollout(cfg, v1(0.0), 12, r2);
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].x(0) == b.steps[k].x(0));
    CHECK(a.steps[k].u(0) == b.steps[k].u(0));
    CHECK(a.steps[k].lambda == b.steps[k].lambda);
  }
  CHECK(a.x_final(0) == b.x_final(0));
}

TEST_CASE("logged dynamics identity") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::CaseMin);
  RolloutRng rng(2024, 0);
  const RolloutRecord rec = rollout(cfg, v1(0.0), 15, rng);
  for (size_t k = 0; k + 1 < rec.steps.size(); ++k) {
    const double next = rec.steps[k].x(0) + rec.steps[k].u(0) + rec.w[k](0);
    CHECK(rec.steps[k + 1].x(0) == doctest::Approx(next).epsilon(1e-14));
    CHECK(rec.steps[k].e(0) == rec.steps[k].x(0) - rec.steps[k].z0(0));
  }
}

TEST_CASE("monte carlo statistics are thread-count invariant") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::Indirect);
  const MonteCarloStats a = monte_carlo(cfg, v1(0.0), 10, 60, RngSpec{7}, 1);
  const MonteCarloStats b = monte_carlo(cfg, v1(0.0), 10, 60, RngSpec{7}, 3);
  CHECK(a.mean_cost == b.mean_cost);
  CHECK((a.p_hat - b.p_hat).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.mean_u_k - b.mean_u_k).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.mean_lambda == b.mean_lambda);

  const MonteCarloStats c = monte_carlo(cfg, v1(0.0), 10, 60, RngSpec{7}, 3);
  CHECK(c.mean_cost == a.mean_cost);  // and run-to-run
}

TEST_CASE("monte carlo attaches the failing rollout index") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::Proposed);
  try {
    monte_carlo(cfg, v1(50.0), 5, 4, RngSpec{1}, 2);  // infeasible start
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("rollout 0") != std::string::npos);
    CHECK(std::string(e.what()).find("k=0") != std::string::npos);
  }
}

TEST_CASE("monte carlo basic aggregates") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::FixedGain);
  const MonteCarloStats st = monte_carlo(cfg, v1(0.0), 8, 500, RngSpec{11}, 0);
  CHECK(st.p_hat(0) == 1.0);  // x0 = 0, u = 0
  for (int k = 0; k < st.T; ++k) {
    CHECK(st.p_hat(k) >= 0.0);
    CHECK(st.p_hat(k) <= 1.0);
    CHECK(st.p_stderr(k) ==
          doctest::Approx(std::sqrt(st.p_hat(k) * (1 - st.p_hat(k)) / 500)).epsilon(1e-12));
  }
  CHECK(std::isnan(st.mean_lambda));  // gain variant logs no lambda
}

TEST_CASE("nestedness check") {
  SmpcConfig cfg = build_smpc_config(preset("table1"), ControllerVariant::Proposed);
  const NestednessResult at0 = nestedness_check(cfg, v1(0.0), 1.0, 0, 50, RngSpec{3});
  CHECK(at0.empirical == 1.0);
  CHECK(at0.analytic == 1.0);

  const int k = 6;
  const NestednessResult res = nestedness_check(cfg, v1(0.0), 1.5, k, 2000, RngSpec{3});
  const double sigma = std::sqrt(cfg.variances.at(k)(0, 0));
  CHECK(res.analytic == doctest::Approx(2.0 * normal_cdf(1.5 / sigma) - 1.0).epsilon(1e-12));
  CHECK(res.empirical >= res.analytic - 3.0 * std::max(res.stderr_, 1e-3));
}
