#pragma once

#include "smpc/model.hpp"

#include <optional>
#include <vector>

namespace smpc {

/// Error covariances Sigma_{x,k} of e_{k+1} = A_K e_k + w with e_0 = 0,
///   Sigma_{x,k+1} = A_K Sigma_{x,k} A_K' + Sigma_w,  Sigma_{x,0} = 0,
/// plus the stationary limit when A_K is Schur. converged_at is the first
/// index whose covariance agrees with the limit to 1e-12.
struct VarianceSequence {
  std::vector<MatrixXd> sigmas;
  std::optional<MatrixXd> sigma_inf;
  std::optional<long> converged_at;

  int k_max() const { return static_cast<int>(sigmas.size()) - 1; }
  const MatrixXd& at(int k) const { return sigmas.at(static_cast<size_t>(k)); }
};

VarianceSequence propagate_variance(const MatrixXd& A_K, const MatrixXd& sigma_w, int k_max);

/// Standard normal CDF, accurate to ~1e-14 (series for the bulk, continued
/// fraction in the tails).
double normal_cdf(double z);

/// Inverse of normal_cdf by bisection; absolute accuracy better than 1e-10.
double standard_normal_quantile(double p);

/// Distribution-free level p~ = dim/(1-p): {x : x' Sigma^{-1} x <= p~} holds
/// with probability at least p for any zero-mean law with covariance Sigma.
double chebyshev_level(double p, int dim);

/// Regularized lower incomplete gamma evaluated as the chi-squared CDF.
double chi_squared_cdf(double x, int dof);

/// Quantile of the chi-squared distribution with dof degrees of freedom,
/// via bisection on the regularized incomplete gamma function.
double chi_squared_quantile(double p, int dof);

enum class PrsMode { GaussianExact, Chebyshev };
enum class PrsShape { SymmetricPerRow, OneSidedPerRow, Ellipsoidal };

/// How probabilistic reachable sets are built: exact Gaussian quantiles or
/// Chebyshev bounds; per-row intervals (symmetric or one-sided) or a full
/// ellipsoid; stationary (Sigma_inf for every step) or time-varying.
/// OneSidedPerRow violates the symmetry assumption the closed-loop
/// guarantees rest on; it exists for the comparison experiments only.
struct PrsSpec {
  PrsMode mode = PrsMode::GaussianExact;
  PrsShape shape = PrsShape::SymmetricPerRow;
  double level = 0.0;
  bool stationary = true;

  bool symmetric() const { return shape != PrsShape::OneSidedPerRow; }
};

/// Margin for one half-space row (c'x + d'u <= h): the amount the offset
/// must shrink so that the nominal constraint implies the chance constraint
/// for the error output (c + K'd)'e.
double row_tightening(const VectorXd& c, const VectorXd& d, const MatrixXd& K,
                      const MatrixXd& sigma_k, double p_row, const PrsSpec& spec);

/// Per-row, per-step margins delta_{i,k} and the tightened polytopes
/// Zbar_k = {(x,u) : H (x,u) <= h - delta_k} together with the limit set.
struct TightenedConstraints {
  MatrixXd margins;             // rows x (k_max+1)
  std::vector<Polytope> sets;   // Zbar_k for k = 0..k_max
  VectorXd margins_inf;
  Polytope set_inf;
  bool stationary = true;

  /// Constraint set used at absolute time k; stationary mode always returns
  /// the limit set, time-varying mode falls back to it beyond k_max (the
  /// margins are nondecreasing, so this is the conservative limit).
  const Polytope& at(long k) const;
};

TightenedConstraints tighten(const ChanceConstraintSpec& chance, const MatrixXd& K,
                             const VarianceSequence& variances, const PrsSpec& spec);

}  // namespace smpc
