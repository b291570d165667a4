#include <cmath>
#include <limits>

#include "matamp/denoisers.hpp"
#include "matamp/linalg.hpp"

namespace matamp {

GaussianPosteriorDenoiser::GaussianPosteriorDenoiser(const Vector& mean, const Matrix& cov, const Matrix& mu,
                                                     const Matrix& tau, bool matches_prior)
    : matches_prior_(matches_prior) {
  const Matrix a = symmetrize(mu * cov * mu.transpose() + tau);
  gain_ = cov * mu.transpose() * regularized_inverse(a, &ridged_);
  offset_ = mean - gain_ * mu * mean;
}

Vector GaussianPosteriorDenoiser::apply(const Vector& s) const { return offset_ + gain_ * s; }

SparsePosteriorDenoiser::SparsePosteriorDenoiser(double eps, const Matrix& mu, const Matrix& tau) {
  const int dim = static_cast<int>(mu.rows());
  precision_ = regularized_inverse(symmetrize(tau));
  for (const auto& atom : SignalPrior::sparse_discrete(eps, dim).atoms()) {
    if (atom.weight <= 0.0) continue;
    atoms_.push_back(atom.value);
    means_.push_back(mu * atom.value);
    log_mass_.push_back(std::log(atom.weight));
  }
}

void SparsePosteriorDenoiser::log_weights(const Vector& s, std::vector<double>& out) const {
  out.resize(atoms_.size());
  for (std::size_t b = 0; b < atoms_.size(); ++b) {
    const Vector r = s - means_[b];
    out[b] = log_mass_[b] - 0.5 * r.dot(precision_ * r);
  }
}

Vector SparsePosteriorDenoiser::apply(const Vector& s) const {
  std::vector<double> lw;
  log_weights(s, lw);
  const double norm = log_sum_exp(lw);
  Vector f = Vector::Zero(s.size());
  for (std::size_t b = 0; b < atoms_.size(); ++b) f += std::exp(lw[b] - norm) * atoms_[b];
  return f;
}

Matrix SparsePosteriorDenoiser::jacobian(const Vector& s) const {
  std::vector<double> lw;
  log_weights(s, lw);
  const double norm = log_sum_exp(lw);
  const Eigen::Index dim = s.size();
  Vector f = Vector::Zero(dim);
  Vector r_bar = Vector::Zero(dim);
  Matrix br = Matrix::Zero(dim, dim);
  for (std::size_t b = 0; b < atoms_.size(); ++b) {
    const double w = std::exp(lw[b] - norm);
    const Vector r = precision_ * (means_[b] - s);
    f += w * atoms_[b];
    r_bar += w * r;
    br += w * atoms_[b] * r.transpose();
  }
  return br - f * r_bar.transpose();
}

SoftThresholdDenoiser::SoftThresholdDenoiser(const Matrix& mu, const Matrix& tau, double zeta) {
  if (!(zeta >= 0.0)) throw ConfigError("soft-threshold zeta must be non-negative");
  mu_inv_ = regularized_inverse(mu);
  const Matrix n = mu_inv_ * tau * mu_inv_.transpose();
  thresholds_.resize(mu.rows());
  for (Eigen::Index l = 0; l < mu.rows(); ++l) thresholds_(l) = zeta * std::sqrt(std::max(n(l, l), 0.0));
}

bool SoftThresholdDenoiser::exceeds(const Vector& s, int l) const {
  return std::abs(mu_inv_.row(l).dot(s)) > thresholds_(l);
}

Vector SoftThresholdDenoiser::apply(const Vector& s) const {
  const Vector x = mu_inv_ * s;
  Vector f(x.size());
  for (Eigen::Index l = 0; l < x.size(); ++l) {
    const double excess = std::abs(x(l)) - thresholds_(l);
    f(l) = excess > 0.0 ? std::copysign(excess, x(l)) : 0.0;
  }
  return f;
}

Matrix SoftThresholdDenoiser::jacobian(const Vector& s) const {
  const Vector x = mu_inv_ * s;
  Matrix j = Matrix::Zero(x.size(), x.size());
  for (Eigen::Index l = 0; l < x.size(); ++l)
    if (std::abs(x(l)) > thresholds_(l)) j.row(l) = mu_inv_.row(l);
  return j;
}

std::unique_ptr<SignalDenoiser> make_signal_denoiser(const SignalDenoiserSpec& spec, const SignalPrior& prior,
                                                     const Matrix& mu, const Matrix& tau) {
  switch (spec.kind) {
    case SignalDenoiserSpec::Kind::bayes:
      if (prior.kind() == SignalPrior::Kind::gaussian)
        return std::make_unique<GaussianPosteriorDenoiser>(prior.mean(), prior.cov(), mu, tau);
      return std::make_unique<SparsePosteriorDenoiser>(prior.eps(), mu, tau);
    case SignalDenoiserSpec::Kind::soft_threshold:
      return std::make_unique<SoftThresholdDenoiser>(mu, tau, spec.zeta);
    case SignalDenoiserSpec::Kind::mismatched_variance: {
      if (!(spec.variance_scale > 0.0)) throw ConfigError("variance_scale must be positive");
      const PriorMoments m = prior_moments(prior);
      return std::make_unique<GaussianPosteriorDenoiser>(m.mean, spec.variance_scale * m.cov, mu, tau, false);
    }
  }
  throw ConfigError("unknown signal denoiser");
}

SignalDenoiserFactory signal_denoiser_factory(const SignalDenoiserSpec& spec, const SignalPrior& prior) {
  return [spec, prior](const Matrix& mu, const Matrix& tau) { return make_signal_denoiser(spec, prior, mu, tau); };
}

}  // namespace matamp
