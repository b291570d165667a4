#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "matamp/common.hpp"
#include "matamp/denoisers.hpp"
#include "matamp/model.hpp"

namespace matamp {

/// Iterates after k completed steps. Before the first step Bhat holds B̂⁰,
/// Rhat holds R̂^{-1} = 0 and Fmat holds F⁰ = I; after step k the members hold
/// Θ^k, R̂^k, C^k and B^{k+1}, B̂^{k+1}, F^{k+1}.
struct AmpState {
  int k = 0;
  Matrix Theta;
  Matrix Rhat;
  Matrix Bmat;
  Matrix Bhat;
  Matrix Fmat;
  Matrix Cmat;
  Matrix MuB_hat;
  Matrix TauB_hat;
  Matrix Sigma_hat;

  int flagged_rows = 0;    // channel Monte Carlo failures in the last step
  int ridge_events = 0;    // regularized inversions so far
  int psd_projections = 0; // Σ̂ updates clipped back to PSD so far

  int dim() const { return static_cast<int>(Bhat.cols()); }
};

enum class InitMode { prior_random, provided_matrix };

/// (p/n) [[E B̄B̄ᵀ, E B̄ E B̄ᵀ], [E B̄ E B̄ᵀ, E B̄B̄ᵀ]] from exact prior moments.
Matrix initial_sigma(const SignalPrior& prior, double delta);

/// prior_random draws B̂⁰ from the prior on the init substream of `seed`.
/// provided_matrix uses `provided`; Σ̂⁰ then comes from the Gram matrices of
/// (B, B̂⁰) scaled by 1/n.
AmpState amp_init(const Instance& instance, const SignalPrior& prior, InitMode mode, std::uint64_t seed,
                  const Matrix* provided = nullptr);

struct AmpOptions {
  /// Subtract R̂^{k-1}(F^k)ᵀ when forming Θ^k. Turning it off is only useful
  /// for demonstrating what the correction buys.
  bool theta_memory = true;
};

/// One AMP iteration. g is built from Σ̂^k, f from the new (Μ̂_B, Τ̂_B).
/// Throws DivergenceError on any non-finite iterate.
void amp_step(AmpState& state, const Matrix& X, const Vector& Y, const SignalPrior& prior,
              const SignalDenoiserFactory& make_f, const ChannelDenoiserFactory& make_g,
              const AmpOptions& options = {});

/// Both equal (1/n) R̂ᵀR̂.
std::pair<Matrix, Matrix> estimate_mu_tau(const Matrix& rhat);

/// C = {Σ̂₂₂⁻¹((1/n)Θᵀ R̂ − Σ̂₂₁ Μ̂ᵀ)}ᵀ.
Matrix estimate_onsager_C(const Matrix& theta, const Matrix& rhat, const Matrix& sigma_hat, const Matrix& mu,
                          bool* ridged = nullptr);

/// Σ̂^{k+1} with Σ̂₁₁ carried over from `sigma_hat`.
/// Bayes-optimal f uses the Gram of B̂; soft thresholding uses per-row
/// threshold exceedances of Μ⁻¹B_j; other affine f under a Gaussian prior use
/// the closed-form cross moment.
Matrix estimate_sigma_next(const Matrix& bmat, const Matrix& bhat, const SignalDenoiser& f, const SignalPrior& prior,
                           const Matrix& sigma_hat, const Matrix& mu, Eigen::Index n);

/// (1/n) Σ_j f'(B_j).
Matrix average_jacobian(const SignalDenoiser& f, const Matrix& bmat, Eigen::Index n);

/// ⟨a, b⟩² / (‖a‖²‖b‖²); 0 when either vector is zero.
double squared_correlation(const Vector& a, const Vector& b);

struct IterationMetrics {
  int k = 0;
  Vector corr;  // per signal
  Vector mse;   // per signal, (1/p)‖β̂ − β‖²
  int flagged_rows = 0;
};

IterationMetrics signal_metrics(int k, const Matrix& bhat, const Matrix& b);

struct AmpRun {
  AmpState state;
  std::vector<IterationMetrics> trace;  // k = 0 .. iterations
};

using AmpHook = std::function<void(const AmpState&)>;

/// Runs `iterations` steps from `state`, recording metrics against the true B
/// before the first step and after every step.
AmpRun run_amp(AmpState state, const Instance& instance, const SignalPrior& prior, const SignalDenoiserFactory& make_f,
               const ChannelDenoiserFactory& make_g, int iterations, const AmpOptions& options = {},
               const AmpHook& hook = {});

}  // namespace matamp
