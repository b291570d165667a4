#include <cmath>
#include <limits>
#include <map>

#include "matamp/denoisers.hpp"
#include "matamp/linalg.hpp"

namespace matamp {

namespace {

// Below this mean likelihood a Monte Carlo estimate is considered failed.
const double kLogDensityFloor = std::log(1e-300);

struct Blocks {
  Matrix s11, s12, s21, s22;
};

Blocks split(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() % 2 != 0)
    throw ConfigError("state covariance must be 2L x 2L");
  const Eigen::Index l = sigma.rows() / 2;
  return {sigma.topLeftCorner(l, l), sigma.topRightCorner(l, l), sigma.bottomLeftCorner(l, l),
          sigma.bottomRightCorner(l, l)};
}

// Self-normalized weighted mean of the columns of z, with a delta-method
// standard error per coordinate.
void weighted_mean(const Matrix& z, const std::vector<double>& log_w, Vector& mean, Vector& se) {
  const double norm = log_sum_exp(log_w);
  const Eigen::Index m = z.cols();
  Vector w(m);
  for (Eigen::Index j = 0; j < m; ++j) w(j) = std::exp(log_w[static_cast<std::size_t>(j)] - norm);
  mean = z * w;
  se = Vector::Zero(z.rows());
  for (Eigen::Index j = 0; j < m; ++j) se += (w(j) * w(j)) * (z.col(j) - mean).cwiseAbs2();
  se = se.cwiseSqrt();
}

}  // namespace

ConditionalGaussian::ConditionalGaussian(const Matrix& sigma) {
  const Blocks b = split(sigma);
  gain = b.s12 * regularized_inverse(symmetrize(b.s22), &ridged);
  cov = psd_repair(symmetrize(b.s11 - gain * b.s21));
  // Rank-deficient conditional covariances are the norm (identical signals,
  // converged iterates), so invert on the range only.
  bool pinv = false;
  cov_inverse = inverse_or_pinv(cov, &pinv);
  ridged = ridged || pinv;
}

ChannelDenoiser::Rows ChannelDenoiser::apply_rows(const Matrix& theta, const Vector& y) const {
  if (theta.rows() != y.size()) throw ConfigError("apply_rows: Theta and Y row counts differ");
  Rows out;
  out.values.resize(theta.rows(), theta.cols());
  for (Eigen::Index i = 0; i < theta.rows(); ++i) {
    bool flagged = false;
    out.values.row(i) = apply(theta.row(i).transpose(), y(i), static_cast<std::uint64_t>(i), &flagged).transpose();
    if (flagged) ++out.flagged;
  }
  return out;
}

// ------------------------------------------------------------------------ MLR

MlrPosteriorDenoiser::MlrPosteriorDenoiser(const Matrix& sigma, const std::vector<double>& proportions,
                                           double noise_sigma, bool bayes_optimal)
    : dim_(static_cast<int>(sigma.rows() / 2)), conditional_(sigma), bayes_optimal_(bayes_optimal) {
  if (static_cast<int>(proportions.size()) != dim_)
    throw ConfigError("MLR denoiser: proportion count must equal the signal count");
  // The branch covariances stay usable at σ = 0, so no density floor here: a
  // floor would stop g being optimal once Var(Z | Z^k) drops below it.
  const double s_eff = noise_sigma;
  ridged_ = conditional_.ridged;

  std::vector<Matrix> augmented;
  std::vector<int> labels;
  double ridge = 0.0;
  for (int l = 0; l < dim_; ++l) {
    if (!(proportions[static_cast<std::size_t>(l)] > 0.0)) continue;
    const Eigen::Index n = 2 * dim_ + 1;
    Matrix a(n, n);
    a.topLeftCorner(2 * dim_, 2 * dim_) = sigma;
    a.block(2 * dim_, 0, 1, 2 * dim_) = sigma.row(l);
    a.block(0, 2 * dim_, 2 * dim_, 1) = sigma.row(l).transpose();
    a(2 * dim_, 2 * dim_) = sigma(l, l) + s_eff * s_eff;
    a = symmetrize(a);
    // Judge conditioning on the correlation scale: a large noise variance next
    // to unit-scale projections is badly scaled, not singular.
    const Matrix obs = a.bottomRightCorner(dim_ + 1, dim_ + 1);
    const Vector d = obs.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    if (condition_number(d.asDiagonal() * obs * d.asDiagonal()) > kRidgeConditionLimit) ridge = kRidgeScale;
    augmented.push_back(a);
    labels.push_back(l);
  }
  if (ridge > 0.0) ridged_ = true;

  for (std::size_t b = 0; b < augmented.size(); ++b) {
    const Matrix& a = augmented[b];
    Matrix obs = a.bottomRightCorner(dim_ + 1, dim_ + 1);
    const double floor = obs.trace() / static_cast<double>(obs.rows());
    obs.diagonal() += ridge * obs.diagonal().cwiseMax(floor);
    GaussianLogDensity density(obs);
    Branch br{labels[b], std::log(proportions[static_cast<std::size_t>(labels[b])]),
              a.block(0, dim_, dim_, dim_ + 1) * density.precision(), density, a};
    branches_.push_back(std::move(br));
  }
}

Matrix MlrPosteriorDenoiser::augmented_covariance(int label) const {
  for (const auto& b : branches_)
    if (b.label == label) return b.augmented;
  throw ConfigError("augmented_covariance: label has zero mass");
}

Vector MlrPosteriorDenoiser::label_posterior(const Vector& u, double y) const {
  Vector uy(dim_ + 1);
  uy << u, y;
  std::vector<double> lw;
  lw.reserve(branches_.size());
  for (const auto& b : branches_) lw.push_back(b.log_weight + b.density(uy));
  const double norm = log_sum_exp(lw);
  Vector w(static_cast<Eigen::Index>(lw.size()));
  for (std::size_t b = 0; b < lw.size(); ++b) w(static_cast<Eigen::Index>(b)) = std::exp(lw[b] - norm);
  return w;
}

Vector MlrPosteriorDenoiser::posterior_mean(const Vector& u, double y) const {
  Vector uy(dim_ + 1);
  uy << u, y;
  const Vector w = label_posterior(u, y);
  Vector mean = Vector::Zero(dim_);
  for (std::size_t b = 0; b < branches_.size(); ++b)
    mean += w(static_cast<Eigen::Index>(b)) * (branches_[b].gain * uy);
  return mean;
}

Vector MlrPosteriorDenoiser::apply(const Vector& u, double y, std::uint64_t, bool*) const {
  return conditional_.cov_inverse * (posterior_mean(u, y) - conditional_.gain * u);
}

// ---------------------------------------------------------------- Monte Carlo

MonteCarloPosteriorDenoiser::MonteCarloPosteriorDenoiser(const Matrix& sigma, Channel channel, int samples,
                                                         std::uint64_t seed, int iteration)
    : dim_(static_cast<int>(sigma.rows() / 2)),
      conditional_(sigma),
      channel_(std::move(channel)),
      samples_(samples),
      seed_(seed),
      iteration_(iteration) {
  if (samples_ < 1) throw ConfigError("mc_samples must be at least 1");
  if (channel_.signal_dim() != dim_) throw ConfigError("Monte Carlo denoiser: channel dimension mismatch");
  factor_ = psd_factor(conditional_.cov);
}

MonteCarloPosteriorDenoiser::Estimate MonteCarloPosteriorDenoiser::posterior_mean(const Vector& u, double y,
                                                                                  std::uint64_t row) const {
  Rng rng(derive_seed(seed_, {tag(Stream::channel_mc), static_cast<std::uint64_t>(iteration_), row}));
  const Vector centre = conditional_.gain * u;
  Matrix xi(dim_, samples_);
  for (int j = 0; j < samples_; ++j)
    for (int l = 0; l < dim_; ++l) xi(l, j) = rng.normal();

  Estimate est;
  std::vector<double> lw(static_cast<std::size_t>(samples_));
  const double log_m = std::log(static_cast<double>(samples_));

  Matrix z = (factor_ * xi).colwise() + centre;
  for (int j = 0; j < samples_; ++j) lw[static_cast<std::size_t>(j)] = channel_.log_likelihood(y, z.col(j));
  if (log_sum_exp(lw) - log_m >= kLogDensityFloor) {
    weighted_mean(z, lw, est.mean, est.standard_error);
    return est;
  }

  // Widened proposal N(centre, 4V), reweighted back to N(centre, V).
  z = (2.0 * factor_ * xi).colwise() + centre;
  const double log_jac = static_cast<double>(dim_) * std::log(2.0);
  for (int j = 0; j < samples_; ++j)
    lw[static_cast<std::size_t>(j)] =
        channel_.log_likelihood(y, z.col(j)) - 1.5 * xi.col(j).squaredNorm() + log_jac;
  if (log_sum_exp(lw) - log_m >= kLogDensityFloor) {
    weighted_mean(z, lw, est.mean, est.standard_error);
    return est;
  }
  est.ok = false;
  est.mean = centre;
  est.standard_error = Vector::Zero(dim_);
  return est;
}

Vector MonteCarloPosteriorDenoiser::apply(const Vector& u, double y, std::uint64_t row, bool* flagged) const {
  const Estimate est = posterior_mean(u, y, row);
  if (!est.ok) {
    if (flagged) *flagged = true;
    return Vector::Zero(dim_);
  }
  return conditional_.cov_inverse * (est.mean - conditional_.gain * u);
}

// -------------------------------------------------------------------- factory

std::unique_ptr<ChannelDenoiser> make_channel_denoiser(const Channel& channel, const Matrix& sigma,
                                                       const ChannelDenoiserSpec& spec, int iteration) {
  if (channel.is_mlr() && !spec.force_monte_carlo) {
    const bool mismatched = spec.proportions.has_value();
    const std::vector<double>& props = mismatched ? *spec.proportions : channel.proportions();
    return std::make_unique<MlrPosteriorDenoiser>(sigma, props, channel.sigma(), !mismatched);
  }
  const Channel used = spec.proportions ? channel.with_proportions(*spec.proportions) : channel;
  return std::make_unique<MonteCarloPosteriorDenoiser>(sigma, used, spec.mc_samples, spec.seed, iteration);
}

ChannelDenoiserFactory channel_denoiser_factory(const Channel& channel, const ChannelDenoiserSpec& spec) {
  return [channel, spec](const Matrix& sigma, int iteration) {
    return make_channel_denoiser(channel, sigma, spec, iteration);
  };
}

// ------------------------------------------------------------------ E[Z | Y]

Matrix draw_gaussian_samples(const Matrix& sigma11, int mc_samples, std::uint64_t seed) {
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  const Matrix f = psd_factor(symmetrize(sigma11));
  Rng rng(derive_seed(seed, {tag(Stream::posterior_mc)}));
  Matrix xi(sigma11.rows(), mc_samples);
  for (int j = 0; j < mc_samples; ++j)
    for (Eigen::Index l = 0; l < sigma11.rows(); ++l) xi(l, j) = rng.normal();
  return f * xi;
}

PosteriorMeanEstimate e_z_given_y(double y, const Matrix& samples, const Channel& channel) {
  std::vector<double> lw(static_cast<std::size_t>(samples.cols()));
  for (Eigen::Index j = 0; j < samples.cols(); ++j)
    lw[static_cast<std::size_t>(j)] = channel.log_likelihood(y, samples.col(j));
  PosteriorMeanEstimate est;
  if (log_sum_exp(lw) - std::log(static_cast<double>(samples.cols())) < kLogDensityFloor) {
    est.ok = false;
    est.mean = samples.rowwise().mean();
    est.standard_error = Vector::Zero(samples.rows());
    return est;
  }
  weighted_mean(samples, lw, est.mean, est.standard_error);
  return est;
}

PosteriorMeanEstimate e_z_given_y(double y, const Matrix& sigma11, const Channel& channel, int mc_samples,
                                  std::uint64_t seed) {
  return e_z_given_y(y, draw_gaussian_samples(sigma11, mc_samples, seed), channel);
}

Matrix e_z_given_y_rows(const Vector& y, const Matrix& sigma11, const Channel& channel, int mc_samples,
                        std::uint64_t seed) {
  const Matrix samples = draw_gaussian_samples(sigma11, mc_samples, seed);
  std::map<double, Vector> cache;
  Matrix out(y.size(), sigma11.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    auto it = cache.find(y(i));
    if (it == cache.end()) it = cache.emplace(y(i), e_z_given_y(y(i), samples, channel).mean).first;
    out.row(i) = it->second.transpose();
  }
  return out;
}

}  // namespace matamp
