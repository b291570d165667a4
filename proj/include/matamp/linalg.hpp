#pragma once

#include <span>

#include "matamp/common.hpp"

namespace matamp {

/// Condition number above which inversions switch to the ridge path.
inline constexpr double kRidgeConditionLimit = 1e12;
/// Relative ridge: A + kRidgeScale * tr(A)/dim * I.
inline constexpr double kRidgeScale = 1e-10;
/// Eigenvalues of a PSD estimate below -kPsdTolerance are treated as an error.
inline constexpr double kPsdTolerance = 1e-8;

Matrix symmetrize(const Matrix& a);

double condition_number(const Matrix& a);

/// Inverse of a square matrix. When the condition number exceeds
/// kRidgeConditionLimit the ridge-regularized inverse is returned; a matrix
/// with zero trace (e.g. the all-zero matrix) falls back to the pseudoinverse.
/// `ridged` is set when either fallback was used.
Matrix regularized_inverse(const Matrix& a, bool* ridged = nullptr);

/// Moore-Penrose pseudoinverse via SVD with relative cutoff `rtol`.
Matrix pseudo_inverse(const Matrix& a, double rtol = 1e-12);

/// Inverse when well conditioned, pseudoinverse otherwise.
Matrix inverse_or_pinv(const Matrix& a, bool* used_pinv = nullptr);

/// Lower-triangular factor F with F F^T = S for symmetric PSD S.
/// Zero pivots yield zero columns, so degenerate covariances reproduce
/// exactly-collinear draws. Throws NumericalError for indefinite input.
Matrix psd_factor(const Matrix& s);

/// Symmetrizes and clips eigenvalues in [-kPsdTolerance, 0) to zero.
/// Throws NumericalError when an eigenvalue is below -kPsdTolerance * max(1, |S|).
Matrix psd_repair(const Matrix& s);

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero).
/// Sets *clipped when any eigenvalue was negative.
Matrix psd_project(const Matrix& s, bool* clipped = nullptr);

/// Largest eigenvalue of Σ₂₂ relative to Σ₁₁ kept when the two blocks are tied
/// (Σ₁₂ = Σ₂₂): the conditional variance Σ₁₁ − Σ₂₂ is floored at this fraction.
inline constexpr double kTiedVarianceFloor = 1e-6;

/// Clips the generalized eigenvalues of `a` relative to PSD `b` into [0, upper],
/// so that 0 ⪯ result ⪯ upper·b. The part of `a` outside the range of `b` is
/// dropped. Sets *clipped when anything changed beyond symmetrization.
Matrix clip_relative(const Matrix& a, const Matrix& b, double upper, bool* clipped = nullptr);

double min_eigenvalue(const Matrix& symmetric);

double operator_norm(const Matrix& a);

/// log(sum_i exp(x_i)), -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> x);

/// Zero-mean Gaussian log-density with a precomputed (possibly ridged) precision.
class GaussianLogDensity {
 public:
  GaussianLogDensity() = default;
  /// `ridge` is added to the diagonal before factorization.
  explicit GaussianLogDensity(const Matrix& cov, double ridge = 0.0);

  double operator()(const Vector& x) const;
  const Matrix& precision() const { return precision_; }
  double log_det() const { return log_det_; }

 private:
  Matrix precision_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
};

}  // namespace matamp
