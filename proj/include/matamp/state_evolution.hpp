#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "matamp/common.hpp"
#include "matamp/denoisers.hpp"
#include "matamp/model.hpp"

namespace matamp {

struct SeState {
  int k = 0;
  double delta = 0.0;
  Matrix Sigma;     // 2L × 2L
  Matrix MuB;       // set by the step that produced this state
  Matrix TauB;
  Matrix MuTheta;
  Matrix TauTheta;
  Matrix NTheta;
  Matrix NB;

  int dim() const { return static_cast<int>(Sigma.rows() / 2); }
};

struct SeConfig {
  Channel channel;
  SignalPrior prior;
  double delta = 1.0;
  SignalDenoiserSpec f_spec{};
  /// g used by AMP; g* is always built from the true channel.
  ChannelDenoiserSpec g_spec{};
  int mc_samples = 100000;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Σ⁰ from exact prior moments, matching amp_init's prior-random mode.
SeState se_init(const SignalPrior& prior, double delta);

/// One step Σ^k -> (Μ_B^{k+1}, Τ_B^{k+1}, Σ^{k+1}). Channel expectations are
/// Monte Carlo over fixed-size batches with per-batch substreams, reduced in
/// batch order; the signal side is closed form for affine f under a Gaussian
/// prior and Monte Carlo otherwise.
SeState se_step(const SeState& state, const SeConfig& config);

/// Runs `iterations` steps and returns states k = 0 .. iterations.
std::vector<SeState> run_se(const SeConfig& config, int iterations);

/// Μ_Θ = Σ₂₁Σ₁₁⁻¹ and Τ_Θ = Σ₂₂ − Σ₂₁Σ₁₁⁻¹Σ₁₂. Throws NumericalError when
/// Σ₁₁ is singular unless `allow_singular`, which switches to the pseudoinverse.
std::pair<Matrix, Matrix> theta_params(const Matrix& sigma, bool allow_singular = false);

/// N = Μ⁻¹ Τ Μ⁻ᵀ with the pseudoinverse for singular Μ.
Matrix effective_noise(const Matrix& mu, const Matrix& tau);

struct SignalPrediction {
  Vector corr;
  Vector mse;
  std::vector<bool> degenerate;  // constant-zero estimate or zero signal
};

/// Per-signal squared correlation and MSE of f_k(B̄^k) implied by Σ^k.
SignalPrediction predict_metrics(const SeState& state);

}  // namespace matamp
