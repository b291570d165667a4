#pragma once

#include <cstdint>
#include <functional>

#include "matamp/common.hpp"
#include "matamp/model.hpp"

namespace matamp {

using VectorMap = std::function<Vector(const Vector&)>;
using JacobianMap = std::function<Matrix(const Vector&)>;

/// Central differences; row i is the gradient of output i.
Matrix fd_jacobian(const VectorMap& fn, const Vector& x, double h = 1e-5);

struct GridSpec {
  int nodes = 401;       // per axis, before refinement
  double width = 6.0;    // half-width in conditional standard deviations
  double refine_tol = 1e-3;
};

struct GridResult {
  Vector mean;
  double refinement_change = 0.0;  // relative change between the two grids
};

/// E[Z | Z^k = u, Ȳ = y] for (Z, Z^k) ~ N(0, Σ) by the trapezoid rule on a
/// tensor grid over the whitened conditional law of Z. The grid is refined
/// once (2·nodes − 1) and a NumericalError is thrown when the relative change
/// exceeds `refine_tol`. Intended for L ≤ 2.
GridResult grid_posterior_mean(const Channel& channel, const Matrix& sigma, const Vector& u, double y,
                               const GridSpec& spec = {});

/// E[Z | Ȳ = y] for Z ~ N(0, Σ₁₁) on the same grid.
GridResult grid_posterior_mean_marginal(const Channel& channel, const Matrix& sigma11, double y,
                                        const GridSpec& spec = {});

struct SteinResult {
  Matrix residual;        // E[∇h(X)] − (Σ⁻¹ E[X h(X)ᵀ])ᵀ
  Matrix standard_error;  // per entry
};

/// Monte Carlo check of the multivariate Stein identity for X ~ N(0, Σ).
/// The gradient comes from `jacobian`, or central differences when empty.
SteinResult stein_check(const Matrix& sigma, const VectorMap& h, const JacobianMap& jacobian, int samples,
                        std::uint64_t seed);

struct MomentDiscrepancy {
  double mean = 0.0;        // max |mean of residual rows|
  double covariance = 0.0;  // max |cov of residual rows − Τ|
  double quadratic = 0.0;   // (B^k_l)²
  double absolute = 0.0;    // |B^k_l − (Μ B_j)_l|
  double product = 0.0;     // B^k_l · B_jl
  double max() const;
};

/// Compares the rows of B^k with the law Μ B̄ + G, G ~ N(0, Τ), using the
/// empirical distribution of the rows of B for B̄.
MomentDiscrepancy empirical_vs_se(const Matrix& bk, const Matrix& b, const Matrix& mu, const Matrix& tau);

/// Least-squares Μ in B^k ≈ B Μᵀ.
Matrix regression_mu(const Matrix& bk, const Matrix& b);

}  // namespace matamp
