#pragma once

#include "smpc/smpc.hpp"

#include <cstdint>
#include <vector>

namespace smpc {

/// Seeding contract for the Monte Carlo harness: rollout r draws its
/// disturbances from a splitmix64 stream whose initial state is
/// splitmix64(master_seed xor (r+1) * 0x9e3779b97f4a7c15). Identical
/// (master_seed, r) therefore reproduce identical disturbance sequences,
/// independent of the controller being simulated.
struct RngSpec {
  std::uint64_t master_seed = 0;
};

/// splitmix64 stream with Box-Muller Gaussian sampling on top.
class RolloutRng {
 public:
  RolloutRng(std::uint64_t master_seed, std::uint64_t rollout_index);

  std::uint64_t next_u64();
  double next_uniform();   // (0, 1]
  double next_gaussian();  // standard normal

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Draws disturbance vectors with the configured law and covariance
/// (samples are the Cholesky factor of sigma_w applied to a unit-covariance
/// Gaussian or symmetric-box draw).
class DisturbanceSampler {
 public:
  explicit DisturbanceSampler(const LtiSystem& sys);
  VectorXd sample(RolloutRng& rng) const;

 private:
  MatrixXd chol_;
  DisturbanceLaw law_;
  int n_;
};

struct StepLog {
  VectorXd x;
  VectorXd u;
  VectorXd z0;  // empty for the gain variants
  VectorXd e;   // x - z0, empty for the gain variants
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double stage_cost = 0.0;
  bool satisfied = false;  // (x,u) in the original constraint set
};

struct RolloutRecord {
  std::vector<StepLog> steps;
  VectorXd x_final;
  std::vector<VectorXd> w;  // logged disturbances, x(k+1) = A x(k) + B u(k) + w(k)
};

/// Closed-loop simulation of T steps from x0 with z*_{1|-1} = x0. Throws on
/// infeasibility (start-up error at k=0, recursive-feasibility violation
/// afterwards).
RolloutRecord rollout(const SmpcConfig& cfg, const VectorXd& x0, int T, RolloutRng& rng);
RolloutRecord rollout(const SmpcConfig& cfg, const VectorXd& x0, int T,
                      const std::vector<VectorXd>& w_seq);

struct MonteCarloStats {
  int n_rollouts = 0;
  int T = 0;
  VectorXd p_hat;           // per-step empirical P[(x,u) in Z]
  VectorXd p_stderr;        // sqrt(p(1-p)/n)
  VectorXd mean_cost_k;     // per-step mean stage cost
  VectorXd mean_u_k;        // mean of u(k)(0)
  VectorXd mean_x_k;        // mean of x(k)(0)
  VectorXd mean_lambda_k;
  double mean_cost = 0.0;         // time-and-rollout average stage cost
  double mean_cost_stderr = 0.0;  // over per-rollout time averages
  double mean_lambda = 0.0;
  double avg_p_hat = 0.0;  // time average of p_hat
  double min_p_hat = 1.0;
};

/// Runs n independent seeded rollouts (optionally on several threads) and
/// aggregates. The reduction runs over stored per-rollout values in rollout
/// order, so the statistics are bitwise independent of the thread count.
/// The first keep_rollouts records are returned through kept when given.
/// Rollout errors are rethrown with the rollout index attached.
MonteCarloStats monte_carlo(const SmpcConfig& cfg, const VectorXd& x0, int T, int n,
                            const RngSpec& rng, int threads = 0, int keep_rollouts = 0,
                            std::vector<RolloutRecord>* kept = nullptr);

struct NestednessResult {
  double empirical = 0.0;
  double analytic = 0.0;
  double stderr_ = 0.0;
};

/// Empirical P[e(k) in R] over n rollouts against the analytic probability
/// of the k-step predicted error e_{k|0} ~ N(0, Sigma_{x,k}) landing in R,
/// where R is the interval [-radius, radius] for scalar errors and the
/// ellipsoid {e : e' Sigma_{x,k}^{-1} e <= radius^2} otherwise. Requires the
/// Gaussian disturbance law.
NestednessResult nestedness_check(const SmpcConfig& cfg, const VectorXd& x0, double radius,
                                  int k, int n, const RngSpec& rng);

}  // namespace smpc
