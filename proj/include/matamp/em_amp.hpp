#pragma once

#include <cstdint>
#include <vector>

#include "matamp/amp.hpp"
#include "matamp/common.hpp"
#include "matamp/denoisers.hpp"
#include "matamp/model.hpp"

namespace matamp {

struct EmUpdate {
  Vector b;
  int count1 = 0;
  int count2 = 0;
  bool empty_branch = false;
};

/// Intercept M-step for two-branch max-affine regression. Row i belongs to
/// branch 1 when Θ̂ᵢ₁ + b₁ > Θ̂ᵢ₂ + b₂ and to branch 2 otherwise; each intercept
/// becomes the branch mean of Yᵢ − EZᵢₗ. An empty branch keeps its intercept.
EmUpdate em_update(const Vector& y, const Matrix& theta_hat, const Vector& b, const Matrix& ez);

struct EmConfig {
  int m_max = 5;
  int k_max = 5;
  int mc_samples = 1000;   // per-row samples inside g
  int ez_samples = 10000;  // shared samples for E[Z | Ȳ]
  bool warm_start = true;
  /// Fix the intercepts at the truth and run m_max·k_max plain AMP iterations.
  bool oracle = false;
  std::uint64_t seed = 0;
  SignalDenoiserSpec f_spec{};
};

struct EmIteration {
  int m = 0;
  Vector b;
  Vector corr;  // squared correlation of (β̂ₗ, b̂ₗ) with (βₗ, bₗ)
  Vector corr_signal;  // squared correlation of β̂ₗ with βₗ alone
  int count1 = 0;
  int count2 = 0;
  bool empty_branch = false;
  int flagged_rows = 0;
};

struct EmResult {
  Vector b;
  Matrix Bhat;
  Matrix ThetaHat;
  std::vector<EmIteration> trace;  // m = 0 .. m_max
};

/// `channel` must be a two-intercept MAR channel; its intercepts are the truth
/// (used only for metrics and the oracle variant).
EmResult em_amp_run(const Instance& instance, const SignalPrior& prior, const Channel& channel, const EmConfig& config);

/// Squared correlation between (β̂, b̂) and (β, b) stacked.
double augmented_correlation(const Vector& beta_hat, double b_hat, const Vector& beta, double b);

}  // namespace matamp
