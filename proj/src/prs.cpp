#include "smpc/prs.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace smpc {

namespace {

constexpr double kTwoOverSqrtPi = 1.1283791670955126;

// erf via its positive-term series erf(x) = (2x/sqrt(pi)) e^{-x^2}
// sum_k (2x^2)^k / (2k+1)!!. No cancellation, ~1e-15 relative for |x| <= 6.
double erf_series(double x) {
  const double x2 = x * x;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 400; ++k) {
    term *= 2.0 * x2 / (2.0 * k + 1.0);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return kTwoOverSqrtPi * x * std::exp(-x2) * sum;
}

// erfc via the Lentz continued fraction, valid for x >= 6 where the series
// prefactor underflows relative to the result scale.
double erfc_cf(double x) {
  const double x2 = x * x;
  constexpr double tiny = 1e-300;
  double b = 1.0;
  double c = 1e300;
  double d = 1.0 / b;
  double f = d;
  for (int k = 1; k < 300; ++k) {
    const double a = 0.5 * k / x2;
    b = 1.0;
    d = 1.0 / (b + a * d);
    c = b + a / c;
    if (c == 0.0) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x2) / (x * std::sqrt(M_PI)) * f;
}

// Regularized lower incomplete gamma P(a,x), series/continued-fraction split
// at x = a+1.
double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: domain error");
  if (x == 0.0) return 0.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 1000; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double f = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - lg) * f;
}

template <typename Cdf>
double quantile_by_bisection(double target, double lo, double hi, Cdf cdf) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (cdf(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double normal_cdf(double z) {
  const double x = z / std::sqrt(2.0);
  if (x < -6.0) return 0.5 * erfc_cf(-x);
  if (x > 6.0) return 1.0 - 0.5 * erfc_cf(x);
  return 0.5 * (1.0 + erf_series(x));
}

double standard_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("standard_normal_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  return quantile_by_bisection(p, -40.0, 40.0, &normal_cdf);
}

double chebyshev_level(double p, int dim) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("chebyshev_level: p must lie in (0,1)");
  if (dim < 1) throw std::invalid_argument("chebyshev_level: dim must be positive");
  return static_cast<double>(dim) / (1.0 - p);
}

double chi_squared_cdf(double x, int dof) {
  if (dof < 1) throw std::invalid_argument("chi_squared_cdf: dof must be positive");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

double chi_squared_quantile(double p, int dof) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("chi_squared_quantile: p must lie in (0,1)");
  if (dof < 1) throw std::invalid_argument("chi_squared_quantile: dof must be positive");
  auto cdf = [dof](double x) { return gamma_p(0.5 * dof, 0.5 * x); };
  double hi = dof + 20.0 * std::sqrt(2.0 * dof) + 200.0;
  while (cdf(hi) < p) hi *= 2.0;
  return quantile_by_bisection(p, 0.0, hi, cdf);
}

VarianceSequence propagate_variance(const MatrixXd& A_K, const MatrixXd& sigma_w, int k_max) {
  if (A_K.rows() != A_K.cols()) throw std::invalid_argument("propagate_variance: A_K not square");
  if (sigma_w.rows() != A_K.rows() || sigma_w.cols() != A_K.cols())
    throw std::invalid_argument("propagate_variance: sigma_w dimension mismatch");
  if (k_max < 0) throw std::invalid_argument("propagate_variance: k_max must be >= 0");

  const int n = static_cast<int>(A_K.rows());
  VarianceSequence out;
  out.sigmas.reserve(static_cast<size_t>(k_max) + 1);
  MatrixXd sigma = MatrixXd::Zero(n, n);
  out.sigmas.push_back(sigma);
  for (int k = 0; k < k_max; ++k) {
    sigma = A_K * sigma * A_K.transpose() + sigma_w;
    sigma = 0.5 * (sigma + sigma.transpose());
    out.sigmas.push_back(sigma);
  }

  if (spectral_radius(A_K) < 1.0) {
    constexpr double kTol = 1e-12;
    constexpr long kMaxIter = 1000000;
    MatrixXd s = MatrixXd::Zero(n, n);
    for (long it = 0; it < kMaxIter; ++it) {
      MatrixXd next = A_K * s * A_K.transpose() + sigma_w;
      next = 0.5 * (next + next.transpose());
      const double diff = (next - s).cwiseAbs().maxCoeff();
      s = next;
      if (diff <= kTol) break;
    }
    if ((A_K * s * A_K.transpose() + sigma_w - s).cwiseAbs().maxCoeff() > kTol * 10)
      throw std::runtime_error("propagate_variance: stationary covariance did not converge");
    out.sigma_inf = s;

    MatrixXd scan = MatrixXd::Zero(n, n);
    for (long k = 0; k < kMaxIter; ++k) {
      if ((scan - s).cwiseAbs().maxCoeff() <= 1e-12) {
        out.converged_at = k;
        break;
      }
      scan = A_K * scan * A_K.transpose() + sigma_w;
      scan = 0.5 * (scan + scan.transpose());
    }
  }
  return out;
}

double row_tightening(const VectorXd& c, const VectorXd& d, const MatrixXd& K,
                      const MatrixXd& sigma_k, double p_row, const PrsSpec& spec) {
  if (!(p_row > 0.0 && p_row < 1.0))
    throw std::invalid_argument("row_tightening: level must lie in (0,1)");
  const VectorXd a = c + K.transpose() * d;
  double var = a.dot(sigma_k * a);
  if (var < 0.0) {
    if (var < -1e-12) throw std::runtime_error("row_tightening: negative row variance");
    var = 0.0;
  }
  const double sigma_row = std::sqrt(var);
  if (sigma_row == 0.0) return 0.0;

  double scale = 0.0;
  switch (spec.shape) {
    case PrsShape::SymmetricPerRow:
      scale = spec.mode == PrsMode::GaussianExact
                  ? standard_normal_quantile(0.5 * (1.0 + p_row))
                  : std::sqrt(chebyshev_level(p_row, 1));
      break;
    case PrsShape::OneSidedPerRow:
      // quantile is negative below p = 1/2; margins stay nonnegative
      scale = spec.mode == PrsMode::GaussianExact
                  ? std::max(0.0, standard_normal_quantile(p_row))
                  : std::sqrt(chebyshev_level(p_row, 1));
      break;
    case PrsShape::Ellipsoidal: {
      const int n = static_cast<int>(sigma_k.rows());
      const double level = spec.mode == PrsMode::GaussianExact
                               ? chi_squared_quantile(p_row, n)
                               : chebyshev_level(p_row, n);
      scale = std::sqrt(level);
      break;
    }
  }
  return sigma_row * scale;
}

const Polytope& TightenedConstraints::at(long k) const {
  if (stationary || k >= static_cast<long>(sets.size())) return set_inf;
  return sets[static_cast<size_t>(k)];
}

TightenedConstraints tighten(const ChanceConstraintSpec& chance, const MatrixXd& K,
                             const VarianceSequence& variances, const PrsSpec& spec) {
  chance.validate();
  const Polytope& Z = chance.set;
  const int n = static_cast<int>(K.cols());
  const int m = static_cast<int>(K.rows());
  if (Z.dim() != n + m) throw std::invalid_argument("tighten: constraint set must live in (x,u)");

  const int rows = Z.rows();
  const int k_max = variances.k_max();

  auto margins_for = [&](const MatrixXd& sigma) {
    VectorXd delta(rows);
    for (int i = 0; i < rows; ++i) {
      const VectorXd c = Z.H.row(i).head(n).transpose();
      const VectorXd d = Z.H.row(i).tail(m).transpose();
      delta(i) = row_tightening(c, d, K, sigma, chance.row_level(i), spec);
    }
    return delta;
  };

  TightenedConstraints out;
  out.stationary = spec.stationary;

  if (!variances.sigma_inf.has_value()) {
    // No stationary covariance (A+BK not Schur). Only rows untouched by the
    // state error can be tightened; anything else is a configuration error.
    for (int i = 0; i < rows; ++i) {
      const VectorXd a =
          Z.H.row(i).head(n).transpose() + K.transpose() * Z.H.row(i).tail(m).transpose();
      if (a.norm() > 1e-12)
        throw std::invalid_argument(
            "tighten: state-error dependent tightening requires a Schur A+BK");
    }
    out.margins_inf = VectorXd::Zero(rows);
  } else {
    out.margins_inf = margins_for(*variances.sigma_inf);
  }
  out.set_inf = Polytope{Z.H, Z.h - out.margins_inf};

  out.margins.resize(rows, k_max + 1);
  out.sets.reserve(static_cast<size_t>(k_max) + 1);
  for (int k = 0; k <= k_max; ++k) {
    const VectorXd delta = spec.stationary ? out.margins_inf : margins_for(variances.at(k));
    out.margins.col(k) = delta;
    out.sets.push_back(Polytope{Z.H, Z.h - delta});
  }

  for (const Polytope& p : out.sets) {
    if (!p.contains_origin(1e-12))
      throw std::invalid_argument("tighten: tightened constraint set is empty at the origin");
  }
  if (!out.set_inf.contains_origin(1e-12))
    throw std::invalid_argument("tighten: limiting tightened set is empty at the origin");
  return out;
}

}  // namespace smpc
