#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "matamp/common.hpp"
#include "matamp/linalg.hpp"
#include "matamp/model.hpp"

namespace matamp {

// ============================================================================
// Signal-side denoisers f: R^L -> R^L
// ============================================================================

/// f(s) = offset + gain * s. Exposed by affine denoisers so expectations under
/// a Gaussian prior can be taken in closed form.
struct AffineMap {
  Vector offset;
  Matrix gain;
};

class SignalDenoiser {
 public:
  virtual ~SignalDenoiser() = default;

  virtual Vector apply(const Vector& s) const = 0;
  /// Row l holds the gradient of output l.
  virtual Matrix jacobian(const Vector& s) const = 0;
  /// True when f(s) = E[B̄ | M B̄ + G = s] under the true prior.
  virtual bool bayes_optimal() const { return false; }
  virtual std::optional<AffineMap> affine() const { return std::nullopt; }
};

/// Posterior mean under a Gaussian prior N(mean, cov), observed through
/// s = M B̄ + G with G ~ N(0, T).
class GaussianPosteriorDenoiser final : public SignalDenoiser {
 public:
  GaussianPosteriorDenoiser(const Vector& mean, const Matrix& cov, const Matrix& mu, const Matrix& tau,
                            bool matches_prior = true);

  Vector apply(const Vector& s) const override;
  Matrix jacobian(const Vector&) const override { return gain_; }
  bool bayes_optimal() const override { return matches_prior_; }
  std::optional<AffineMap> affine() const override { return AffineMap{offset_, gain_}; }
  bool ridged() const { return ridged_; }

 private:
  Matrix gain_;
  Vector offset_;
  bool matches_prior_;
  bool ridged_ = false;
};

/// Posterior mean for the sparse three-point prior, exact over its 3^L atoms.
class SparsePosteriorDenoiser final : public SignalDenoiser {
 public:
  SparsePosteriorDenoiser(double eps, const Matrix& mu, const Matrix& tau);

  Vector apply(const Vector& s) const override;
  Matrix jacobian(const Vector& s) const override;
  bool bayes_optimal() const override { return true; }

 private:
  // log prior mass + log-likelihood of s for each atom (shared normalizer dropped)
  void log_weights(const Vector& s, std::vector<double>& out) const;

  std::vector<Vector> atoms_;
  std::vector<Vector> means_;  // M b for each atom
  std::vector<double> log_mass_;
  Matrix precision_;
};

/// Componentwise soft thresholding of M^{-1}s at ζ·sqrt(diag N), N = M^{-1} T M^{-T}.
class SoftThresholdDenoiser final : public SignalDenoiser {
 public:
  SoftThresholdDenoiser(const Matrix& mu, const Matrix& tau, double zeta);

  Vector apply(const Vector& s) const override;
  Matrix jacobian(const Vector& s) const override;

  /// Whether |(M^{-1}s)_l| exceeds the threshold of coordinate l.
  bool exceeds(const Vector& s, int l) const;
  const Vector& thresholds() const { return thresholds_; }
  const Matrix& mu_inverse() const { return mu_inv_; }

 private:
  Matrix mu_inv_;
  Vector thresholds_;
};

/// Soft-threshold level that is minimax for priors with at least 90% mass at zero.
inline constexpr double kDefaultSoftThresholdZeta = 1.1402;

struct SignalDenoiserSpec {
  enum class Kind { bayes, soft_threshold, mismatched_variance };
  Kind kind = Kind::bayes;
  double zeta = kDefaultSoftThresholdZeta;
  /// Prior covariance multiplier for the mismatched Gaussian denoiser.
  double variance_scale = 2.0;
};

/// Builds f_{k} for the current (M_B, T_B).
std::unique_ptr<SignalDenoiser> make_signal_denoiser(const SignalDenoiserSpec& spec, const SignalPrior& prior,
                                                     const Matrix& mu, const Matrix& tau);

using SignalDenoiserFactory = std::function<std::unique_ptr<SignalDenoiser>(const Matrix& mu, const Matrix& tau)>;

SignalDenoiserFactory signal_denoiser_factory(const SignalDenoiserSpec& spec, const SignalPrior& prior);

// ============================================================================
// Channel-side denoisers g: (u ∈ R^L, y) -> R^L
// ============================================================================

/// Moments of Z | Z^k = u for (Z, Z^k) ~ N(0, Σ).
struct ConditionalGaussian {
  Matrix gain;         // Σ₁₂ Σ₂₂⁻¹, so E[Z | u] = gain * u
  Matrix cov;          // Σ₁₁ − Σ₁₂ Σ₂₂⁻¹ Σ₂₁
  Matrix cov_inverse;  // regularized inverse, zero where cov is zero
  bool ridged = false;

  explicit ConditionalGaussian(const Matrix& sigma);
};

class ChannelDenoiser {
 public:
  virtual ~ChannelDenoiser() = default;

  /// `row` seeds any per-row Monte Carlo; `flagged` reports a failed row.
  virtual Vector apply(const Vector& u, double y, std::uint64_t row, bool* flagged = nullptr) const = 0;
  virtual bool bayes_optimal() const { return true; }
  virtual int dim() const = 0;
  /// Whether a matrix inversion inside the context hit the ridge path.
  virtual bool ridged() const { return false; }

  struct Rows {
    Matrix values;
    int flagged = 0;
  };
  /// Applies g to every row of (Theta, Y).
  Rows apply_rows(const Matrix& theta, const Vector& y) const;
};

/// Closed-form g* for mixed linear regression: each label branch makes
/// (Z, Z^k, Ȳ) jointly Gaussian, and label posteriors mix the branch means.
class MlrPosteriorDenoiser final : public ChannelDenoiser {
 public:
  /// `proportions` may differ from the data-generating ones (mismatched α̂).
  MlrPosteriorDenoiser(const Matrix& sigma, const std::vector<double>& proportions, double noise_sigma,
                       bool bayes_optimal = true);

  Vector apply(const Vector& u, double y, std::uint64_t row, bool* flagged = nullptr) const override;
  bool bayes_optimal() const override { return bayes_optimal_; }
  int dim() const override { return dim_; }
  bool ridged() const override { return ridged_; }

  /// P[label = l | Z^k = u, Ȳ = y] for every branch.
  Vector label_posterior(const Vector& u, double y) const;
  /// E[Z | Z^k = u, Ȳ = y].
  Vector posterior_mean(const Vector& u, double y) const;
  /// The (2L+1)-dimensional covariance of (Z, Z^k, Ȳ) given label l.
  Matrix augmented_covariance(int label) const;

 private:
  struct Branch {
    int label;
    double log_weight;
    Matrix gain;  // L × (L+1): E[Z | Z^k, Ȳ, label] = gain * (u, y)
    GaussianLogDensity density;
    Matrix augmented;
  };

  int dim_;
  ConditionalGaussian conditional_;
  std::vector<Branch> branches_;
  bool bayes_optimal_;
  bool ridged_ = false;
};

/// Monte Carlo g* for any channel with a likelihood: samples Z | Z^k = u and
/// reweights by p(y | Z). Used for MAR and MOE (and for MLR as a cross-check).
class MonteCarloPosteriorDenoiser final : public ChannelDenoiser {
 public:
  MonteCarloPosteriorDenoiser(const Matrix& sigma, Channel channel, int samples, std::uint64_t seed,
                              int iteration);

  Vector apply(const Vector& u, double y, std::uint64_t row, bool* flagged = nullptr) const override;
  int dim() const override { return dim_; }
  bool ridged() const override { return conditional_.ridged; }

  struct Estimate {
    Vector mean;
    Vector standard_error;
    bool ok = true;
  };
  /// Ê[Z | Z^k = u, Ȳ = y] with a delta-method standard error.
  Estimate posterior_mean(const Vector& u, double y, std::uint64_t row) const;

 private:
  int dim_;
  ConditionalGaussian conditional_;
  Matrix factor_;
  Channel channel_;
  int samples_;
  std::uint64_t seed_;
  int iteration_;
};

struct ChannelDenoiserSpec {
  /// Overrides the mixture proportions used inside g (mismatched α̂).
  std::optional<std::vector<double>> proportions;
  int mc_samples = 1000;
  bool force_monte_carlo = false;
  std::uint64_t seed = 0;
};

std::unique_ptr<ChannelDenoiser> make_channel_denoiser(const Channel& channel, const Matrix& sigma,
                                                       const ChannelDenoiserSpec& spec, int iteration);

using ChannelDenoiserFactory = std::function<std::unique_ptr<ChannelDenoiser>(const Matrix& sigma, int iteration)>;

ChannelDenoiserFactory channel_denoiser_factory(const Channel& channel, const ChannelDenoiserSpec& spec);

/// Self-normalized importance estimate Ê[Z | Ȳ = y] with Z ~ N(0, Σ₁₁).
/// `samples` is a shared L × m draw from N(0, Σ₁₁); reused across rows.
struct PosteriorMeanEstimate {
  Vector mean;
  Vector standard_error;
  bool ok = true;
};
PosteriorMeanEstimate e_z_given_y(double y, const Matrix& samples, const Channel& channel);

/// Convenience overload that draws its own samples.
PosteriorMeanEstimate e_z_given_y(double y, const Matrix& sigma11, const Channel& channel, int mc_samples,
                                  std::uint64_t seed);

/// L × m draws from N(0, Σ₁₁).
Matrix draw_gaussian_samples(const Matrix& sigma11, int mc_samples, std::uint64_t seed);

/// Ê[Z | Ȳ = Y_i] for every row, computed once per distinct y.
Matrix e_z_given_y_rows(const Vector& y, const Matrix& sigma11, const Channel& channel, int mc_samples,
                        std::uint64_t seed);

}  // namespace matamp
