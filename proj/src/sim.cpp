#include "smpc/sim.hpp"

#include "smpc/prs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace smpc {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RolloutRng::RolloutRng(std::uint64_t master_seed, std::uint64_t rollout_index) {
  std::uint64_t s = master_seed ^ ((rollout_index + 1) * 0x9e3779b97f4a7c15ULL);
  state_ = splitmix64(s);
}

std::uint64_t RolloutRng::next_u64() { return splitmix64(state_); }

double RolloutRng::next_uniform() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RolloutRng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

DisturbanceSampler::DisturbanceSampler(const LtiSystem& sys)
    : law_(sys.law), n_(sys.state_dim()) {
  Eigen::LLT<MatrixXd> llt(sys.sigma_w);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("DisturbanceSampler: sigma_w is not positive definite");
  chol_ = llt.matrixL();
}

VectorXd DisturbanceSampler::sample(RolloutRng& rng) const {
  VectorXd xi(n_);
  if (law_ == DisturbanceLaw::Gaussian) {
    for (int i = 0; i < n_; ++i) xi(i) = rng.next_gaussian();
  } else {
    const double s3 = std::sqrt(3.0);
    for (int i = 0; i < n_; ++i) xi(i) = s3 * (2.0 * rng.next_uniform() - 1.0);
  }
  return chol_ * xi;
}

RolloutRecord rollout(const SmpcConfig& cfg, const VectorXd& x0, int T, RolloutRng& rng) {
  DisturbanceSampler sampler(cfg.sys);
  std::vector<VectorXd> w;
  w.reserve(static_cast<size_t>(T));
  for (int k = 0; k < T; ++k) w.push_back(sampler.sample(rng));
  return rollout(cfg, x0, T, w);
}

RolloutRecord rollout(const SmpcConfig& cfg, const VectorXd& x0, int T,
                      const std::vector<VectorXd>& w_seq) {
  if (T < 1) throw std::invalid_argument("rollout: need at least one step");
  if (static_cast<int>(w_seq.size()) < T)
    throw std::invalid_argument("rollout: disturbance sequence shorter than T");
  if (x0.size() != cfg.sys.state_dim()) throw std::invalid_argument("rollout: x0 dimension");

  const bool gain = is_gain_variant(cfg.variant);
  RolloutRecord rec;
  rec.steps.reserve(static_cast<size_t>(T));
  rec.w.assign(w_seq.begin(), w_seq.begin() + T);

  VectorXd x = x0;
  VectorXd z_prev = x0;  // z*_{1|-1} = x0
  for (int k = 0; k < T; ++k) {
    const MpcStepResult res = solve_step(cfg, x, z_prev, k);
    if (!res.feasible) {
      std::ostringstream msg;
      if (k == 0)
        msg << "rollout: step problem infeasible at k=0";
      else
        msg << "rollout: step problem infeasible at k=" << k
            << " despite a feasible start (recursive feasibility violated)";
      throw std::runtime_error(msg.str());
    }
    StepLog log;
    log.x = x;
    log.u = res.u_applied;
    log.lambda = res.lambda_star;
    if (!gain) {
      log.z0 = res.z_star.col(0);
      log.e = x - log.z0;
    }
    log.stage_cost = cfg.cost.evaluate(x, res.u_applied);
    VectorXd xu(x.size() + res.u_applied.size());
    xu << x, res.u_applied;
    log.satisfied = cfg.chance.set.contains(xu, 1e-9);
    rec.steps.push_back(std::move(log));

    x = cfg.sys.A * x + cfg.sys.B * res.u_applied + rec.w[static_cast<size_t>(k)];
    if (!gain) z_prev = res.z_star.col(1);
  }
  rec.x_final = x;
  return rec;
}

namespace {

struct RolloutScalars {
  // one value per (rollout, step), reduced sequentially in rollout order
  std::vector<std::uint8_t> sat;
  std::vector<double> cost, u0, x0c, lambda;
  std::vector<double> rollout_mean_cost;  // one per rollout

  explicit RolloutScalars(int n, int T)
      : sat(static_cast<size_t>(n) * T),
        cost(static_cast<size_t>(n) * T),
        u0(static_cast<size_t>(n) * T),
        x0c(static_cast<size_t>(n) * T),
        lambda(static_cast<size_t>(n) * T),
        rollout_mean_cost(static_cast<size_t>(n)) {}
};

}  // namespace

MonteCarloStats monte_carlo(const SmpcConfig& cfg, const VectorXd& x0, int T, int n,
                            const RngSpec& rng, int threads, int keep_rollouts,
                            std::vector<RolloutRecord>* kept) {
  if (n < 1) throw std::invalid_argument("monte_carlo: need at least one rollout");
  if (threads <= 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<int>(threads, n);
  keep_rollouts = std::min(keep_rollouts, n);
  if (kept) kept->assign(static_cast<size_t>(keep_rollouts), RolloutRecord{});

  RolloutScalars data(n, T);
  std::vector<std::string> errors(static_cast<size_t>(threads));
  std::vector<long> error_index(static_cast<size_t>(threads), -1);

  auto worker = [&](int tid, int lo, int hi) {
    for (int r = lo; r < hi; ++r) {
      try {
        RolloutRng stream(rng.master_seed, static_cast<std::uint64_t>(r));
        RolloutRecord rec = rollout(cfg, x0, T, stream);
        double cost_sum = 0.0;
        for (int k = 0; k < T; ++k) {
          const StepLog& s = rec.steps[static_cast<size_t>(k)];
          const size_t idx = static_cast<size_t>(r) * T + static_cast<size_t>(k);
          data.sat[idx] = s.satisfied ? 1 : 0;
          data.cost[idx] = s.stage_cost;
          data.u0[idx] = s.u(0);
          data.x0c[idx] = s.x(0);
          data.lambda[idx] = s.lambda;
          cost_sum += s.stage_cost;
        }
        data.rollout_mean_cost[static_cast<size_t>(r)] = cost_sum / T;
        if (kept && r < keep_rollouts) (*kept)[static_cast<size_t>(r)] = std::move(rec);
      } catch (const std::exception& e) {
        if (error_index[static_cast<size_t>(tid)] < 0) {
          error_index[static_cast<size_t>(tid)] = r;
          errors[static_cast<size_t>(tid)] = e.what();
        }
        return;
      }
    }
  };

  if (threads == 1) {
    worker(0, 0, n);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * chunk;
      const int hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(worker, t, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  long first_error = -1;
  int error_tid = -1;
  for (int t = 0; t < threads; ++t) {
    if (error_index[static_cast<size_t>(t)] >= 0 &&
        (first_error < 0 || error_index[static_cast<size_t>(t)] < first_error)) {
      first_error = error_index[static_cast<size_t>(t)];
      error_tid = t;
    }
  }
  if (first_error >= 0) {
    std::ostringstream msg;
    msg << "monte_carlo: rollout " << first_error << " failed: "
        << errors[static_cast<size_t>(error_tid)];
    throw std::runtime_error(msg.str());
  }

  MonteCarloStats st;
  st.n_rollouts = n;
  st.T = T;
  st.p_hat = VectorXd::Zero(T);
  st.p_stderr = VectorXd::Zero(T);
  st.mean_cost_k = VectorXd::Zero(T);
  st.mean_u_k = VectorXd::Zero(T);
  st.mean_x_k = VectorXd::Zero(T);
  st.mean_lambda_k = VectorXd::Zero(T);
  for (int k = 0; k < T; ++k) {
    double sat = 0.0, cost = 0.0, u = 0.0, x = 0.0, lam = 0.0;
    for (int r = 0; r < n; ++r) {
      const size_t idx = static_cast<size_t>(r) * T + static_cast<size_t>(k);
      sat += data.sat[idx];
      cost += data.cost[idx];
      u += data.u0[idx];
      x += data.x0c[idx];
      lam += data.lambda[idx];
    }
    const double p = sat / n;
    st.p_hat(k) = p;
    st.p_stderr(k) = std::sqrt(std::max(0.0, p * (1.0 - p) / n));
    st.mean_cost_k(k) = cost / n;
    st.mean_u_k(k) = u / n;
    st.mean_x_k(k) = x / n;
    st.mean_lambda_k(k) = lam / n;
  }
  double mean = 0.0;
  for (int r = 0; r < n; ++r) mean += data.rollout_mean_cost[static_cast<size_t>(r)];
  mean /= n;
  double var = 0.0;
  for (int r = 0; r < n; ++r) {
    const double d = data.rollout_mean_cost[static_cast<size_t>(r)] - mean;
    var += d * d;
  }
  st.mean_cost = mean;
  st.mean_cost_stderr = n > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  st.mean_lambda = st.mean_lambda_k.mean();
  st.avg_p_hat = st.p_hat.mean();
  st.min_p_hat = st.p_hat.minCoeff();
  return st;
}

NestednessResult nestedness_check(const SmpcConfig& cfg, const VectorXd& x0, double radius,
                                  int k, int n, const RngSpec& rng) {
  if (cfg.sys.law != DisturbanceLaw::Gaussian)
    throw std::invalid_argument("nestedness_check: analytic side requires Gaussian noise");
  if (k < 0 || k > cfg.variances.k_max())
    throw std::invalid_argument("nestedness_check: step outside the variance sequence");
  if (radius < 0.0) throw std::invalid_argument("nestedness_check: radius must be >= 0");

  const int dim = cfg.sys.state_dim();
  const MatrixXd& sigma = cfg.variances.at(k);
  const bool degenerate = sigma.cwiseAbs().maxCoeff() <= 1e-300;
  long hits = 0;
  for (int r = 0; r < n; ++r) {
    RolloutRng stream(rng.master_seed, static_cast<std::uint64_t>(r));
    RolloutRecord rec = rollout(cfg, x0, k + 1, stream);
    const VectorXd& e = rec.steps[static_cast<size_t>(k)].e;
    bool inside;
    if (degenerate) {
      inside = e.cwiseAbs().maxCoeff() <= 1e-9;
    } else if (dim == 1) {
      inside = std::abs(e(0)) <= radius;
    } else {
      const VectorXd y = sigma.ldlt().solve(e);
      inside = e.dot(y) <= radius * radius;
    }
    if (inside) ++hits;
  }

  NestednessResult out;
  out.empirical = static_cast<double>(hits) / n;
  if (degenerate) {
    out.analytic = 1.0;
  } else if (dim == 1) {
    out.analytic = 2.0 * normal_cdf(radius / std::sqrt(sigma(0, 0))) - 1.0;
  } else {
    out.analytic = chi_squared_cdf(radius * radius, dim);
  }
  out.stderr_ = std::sqrt(std::max(0.0, out.empirical * (1.0 - out.empirical) / n));
  return out;
}

}  // namespace smpc
