#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matamp/common.hpp"
#include "matamp/rng.hpp"

namespace matamp {

/// Law of one signal row B̄ ∈ R^L: correlated Gaussian, or the three-point
/// law (ε/2)δ₊₁ + (1−ε)δ₀ + (ε/2)δ₋₁ applied independently per coordinate.
class SignalPrior {
 public:
  enum class Kind { gaussian, sparse_discrete };

  struct Atom {
    Vector value;
    double weight;
  };

  /// Throws ConfigError when `cov` is not symmetric PSD or shapes disagree.
  static SignalPrior gaussian(Vector mean, Matrix cov);
  /// Unit-variance bivariate Gaussian with correlation rho and zero mean.
  static SignalPrior gaussian_rho(double rho);
  static SignalPrior sparse_discrete(double eps, int dim);

  Kind kind() const { return kind_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  double eps() const { return eps_; }
  Matrix second_moment() const { return cov_ + mean_ * mean_.transpose(); }

  /// The 3^L support points of the sparse-discrete law with their masses.
  std::vector<Atom> atoms() const;

  Vector draw(Rng& rng) const;
  std::string name() const;

 private:
  SignalPrior() = default;

  Kind kind_ = Kind::gaussian;
  Vector mean_;
  Matrix cov_;
  Matrix factor_;
  double eps_ = 0.0;
};

struct PriorMoments {
  Vector mean;
  Matrix cov;
  Matrix second;
};

PriorMoments prior_moments(const SignalPrior& prior);

/// p × L matrix with i.i.d. rows from the prior; deterministic in `seed`.
Matrix sample_prior(const SignalPrior& prior, int p, std::uint64_t seed);

/// Output map q(z, ψ) and the auxiliary law for each supported model.
///
/// Auxiliary rows ψ:
///  - mlr2/mlr3: (label index, ε); label 0 selects z₁.
///  - mar:       (ε)
///  - moe:       (gating draw ψ ~ U[0,1], ε); z = (β₁, β₂, w₁, w₂) projections.
class Channel {
 public:
  enum class Kind { mlr2, mlr3, mar, moe };

  /// Densities replace σ by max(σ, kMinDensitySigma) so σ = 0 stays usable.
  static constexpr double kMinDensitySigma = 1e-4;

  static Channel mlr2(double alpha, double sigma);
  static Channel mlr3(const std::vector<double>& proportions, double sigma);
  static Channel mar(Vector intercepts, double sigma);
  static Channel moe(double sigma);

  Kind kind() const { return kind_; }
  bool is_mlr() const { return kind_ == Kind::mlr2 || kind_ == Kind::mlr3; }
  int signal_dim() const;
  int aux_dim() const;
  double sigma() const { return sigma_; }
  double density_sigma() const;
  /// Mixture proportions for mlr2 ({α, 1−α}) and mlr3.
  const std::vector<double>& proportions() const { return proportions_; }
  const Vector& intercepts() const { return intercepts_; }
  std::string name() const;

  /// Same channel with the mixture proportions replaced (mismatched-α runs).
  Channel with_proportions(const std::vector<double>& proportions) const;
  /// Same channel with new intercepts (EM-AMP inner runs).
  Channel with_intercepts(Vector intercepts) const;

  double eval(const Vector& z, const Vector& psi) const;

  /// Index of the active max-affine branch; ties resolve to the later branch.
  int mar_branch(const Vector& z) const;
  /// Softmax gate probability of expert 1.
  static double moe_gate(const Vector& z);

  /// Draws the non-noise auxiliary coordinates and the noise separately so
  /// they can come from distinct substreams.
  Vector draw_aux(Rng& latent_rng, Rng& noise_rng) const;

  /// log p(y | z) with the σ floor applied; ψ is integrated out.
  double log_likelihood(double y, const Vector& z) const;

 private:
  Channel() = default;

  Kind kind_ = Kind::mlr2;
  double sigma_ = 0.0;
  std::vector<double> proportions_;
  Vector intercepts_;
};

struct Instance {
  Matrix X;      // n × p, entries N(0, 1/n)
  Matrix B;      // p × L
  Matrix Psi;    // n × L_Ψ
  Vector Y;      // n
  double delta = 0.0;
  std::vector<int> labels;  // MLR component per row, MAR active branch, MOE chosen expert
  Vector gate_draws;        // MOE ψ_i (empty otherwise)

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
};

/// Synthetic instance. Independent substreams of `seed` drive the design,
/// the signal, the latent auxiliaries, and the noise.
Instance generate_instance(const Channel& channel, const SignalPrior& prior, int n, int p, std::uint64_t seed);

}  // namespace matamp
