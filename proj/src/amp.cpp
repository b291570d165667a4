#include "matamp/amp.hpp"

#include <cmath>
#include <tuple>

#include "matamp/linalg.hpp"
#include "matamp/rng.hpp"

namespace matamp {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix assemble(const Matrix& s11, const Matrix& s12, const Matrix& s22) {
  const Eigen::Index l = s11.rows();
  Matrix s(2 * l, 2 * l);
  s.topLeftCorner(l, l) = s11;
  s.topRightCorner(l, l) = s12;
  s.bottomLeftCorner(l, l) = s12.transpose();
  s.bottomRightCorner(l, l) = s22;
  return symmetrize(s);
}

}  // namespace

Matrix initial_sigma(const SignalPrior& prior, double delta) {
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  const PriorMoments m = prior_moments(prior);
  const Matrix mm = m.mean * m.mean.transpose();
  return assemble(m.second, mm, m.second) / delta;
}

AmpState amp_init(const Instance& instance, const SignalPrior& prior, InitMode mode, std::uint64_t seed,
                  const Matrix* provided) {
  const Eigen::Index n = instance.n();
  const Eigen::Index p = instance.p();
  const Eigen::Index l = instance.B.cols();
  if (prior.dim() != l) throw ConfigError("amp_init: prior dimension does not match the instance");

  AmpState s;
  if (mode == InitMode::prior_random) {
    s.Bhat = sample_prior(prior, static_cast<int>(p), derive_seed(seed, {tag(Stream::init)}));
    s.Sigma_hat = initial_sigma(prior, instance.delta);
  } else {
    if (!provided) throw ConfigError("amp_init: provided_matrix mode needs an initial matrix");
    if (provided->rows() != p || provided->cols() != l)
      throw ConfigError("amp_init: initial matrix must be " + std::to_string(p) + " x " + std::to_string(l));
    s.Bhat = *provided;
    const double inv_n = 1.0 / static_cast<double>(n);
    s.Sigma_hat = assemble(inv_n * instance.B.transpose() * instance.B, inv_n * instance.B.transpose() * s.Bhat,
                           inv_n * s.Bhat.transpose() * s.Bhat);
  }
  s.Rhat = Matrix::Zero(n, l);
  s.Fmat = Matrix::Identity(l, l);
  s.Cmat = Matrix::Zero(l, l);
  s.Bmat = Matrix::Zero(p, l);
  s.Theta = Matrix::Zero(n, l);
  s.MuB_hat = Matrix::Zero(l, l);
  s.TauB_hat = Matrix::Zero(l, l);
  return s;
}

std::pair<Matrix, Matrix> estimate_mu_tau(const Matrix& rhat) {
  const Matrix g = symmetrize(rhat.transpose() * rhat / static_cast<double>(rhat.rows()));
  return {g, g};
}

Matrix estimate_onsager_C(const Matrix& theta, const Matrix& rhat, const Matrix& sigma_hat, const Matrix& mu,
                          bool* ridged) {
  const Eigen::Index l = theta.cols();
  const Matrix s21 = sigma_hat.bottomLeftCorner(l, l);
  const Matrix s22 = sigma_hat.bottomRightCorner(l, l);
  const Matrix cross = theta.transpose() * rhat / static_cast<double>(theta.rows());
  return (regularized_inverse(symmetrize(s22), ridged) * (cross - s21 * mu.transpose())).transpose();
}

Matrix average_jacobian(const SignalDenoiser& f, const Matrix& bmat, Eigen::Index n) {
  const double scale = static_cast<double>(bmat.rows()) / static_cast<double>(n);
  if (const auto aff = f.affine()) return scale * aff->gain;
  Matrix acc = Matrix::Zero(bmat.cols(), bmat.cols());
  for (Eigen::Index j = 0; j < bmat.rows(); ++j) acc += f.jacobian(bmat.row(j).transpose());
  return acc / static_cast<double>(n);
}

Matrix estimate_sigma_next(const Matrix& bmat, const Matrix& bhat, const SignalDenoiser& f, const SignalPrior& prior,
                           const Matrix& sigma_hat, const Matrix& mu, Eigen::Index n) {
  const Eigen::Index l = bhat.cols();
  const double p = static_cast<double>(bhat.rows());
  const Matrix s11 = sigma_hat.topLeftCorner(l, l);
  const Matrix s22 = bhat.transpose() * bhat / static_cast<double>(n);

  if (f.bayes_optimal()) return assemble(s11, s22, s22);

  if (const auto* st = dynamic_cast<const SoftThresholdDenoiser*>(&f)) {
    if (prior.kind() != SignalPrior::Kind::sparse_discrete)
      throw ConfigError("soft-threshold denoiser needs the sparse-discrete prior");
    Matrix s12 = Matrix::Zero(l, l);
    for (Eigen::Index c = 0; c < l; ++c) {
      Eigen::Index hits = 0;
      for (Eigen::Index j = 0; j < bmat.rows(); ++j)
        if (st->exceeds(bmat.row(j).transpose(), static_cast<int>(c))) ++hits;
      s12(c, c) = prior.eps() * static_cast<double>(hits) / static_cast<double>(n);
    }
    return assemble(s11, s12, s22);
  }

  if (const auto aff = f.affine(); aff && prior.kind() == SignalPrior::Kind::gaussian) {
    // E[B̄ f(Μ B̄ + G)ᵀ] = E[B̄] aᵀ + E[B̄B̄ᵀ] Μᵀ Kᵀ
    const Matrix cross = prior.mean() * aff->offset.transpose() + prior.second_moment() * mu.transpose() *
                                                                       aff->gain.transpose();
    return assemble(s11, (p / static_cast<double>(n)) * cross, s22);
  }
  throw ConfigError("no Σ estimate available for this denoiser and prior");
}

double squared_correlation(const Vector& a, const Vector& b) {
  const double na = a.squaredNorm();
  const double nb = b.squaredNorm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double d = a.dot(b);
  return d * d / (na * nb);
}

IterationMetrics signal_metrics(int k, const Matrix& bhat, const Matrix& b) {
  IterationMetrics m;
  m.k = k;
  m.corr.resize(b.cols());
  m.mse.resize(b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    m.corr(c) = squared_correlation(bhat.col(c), b.col(c));
    m.mse(c) = (bhat.col(c) - b.col(c)).squaredNorm() / static_cast<double>(b.rows());
  }
  return m;
}

void amp_step(AmpState& s, const Matrix& X, const Vector& Y, const SignalPrior& prior,
              const SignalDenoiserFactory& make_f, const ChannelDenoiserFactory& make_g, const AmpOptions& options) {
  const Eigen::Index n = X.rows();
  if (s.Bhat.rows() != X.cols() || s.Rhat.rows() != n || Y.size() != n)
    throw ConfigError("amp_step: state shapes do not match the design");

  s.Theta = X * s.Bhat;
  if (options.theta_memory) s.Theta.noalias() -= s.Rhat * s.Fmat.transpose();
  if (!all_finite(s.Theta)) throw DivergenceError(s.k, "non-finite Theta");

  const auto g = make_g(s.Sigma_hat, s.k);
  if (g->ridged()) ++s.ridge_events;
  ChannelDenoiser::Rows rows = g->apply_rows(s.Theta, Y);
  s.Rhat = std::move(rows.values);
  s.flagged_rows = rows.flagged;
  if (!all_finite(s.Rhat)) throw DivergenceError(s.k, "non-finite Rhat");

  std::tie(s.MuB_hat, s.TauB_hat) = estimate_mu_tau(s.Rhat);
  bool ridged = false;
  s.Cmat = estimate_onsager_C(s.Theta, s.Rhat, s.Sigma_hat, s.MuB_hat, &ridged);
  if (ridged) ++s.ridge_events;

  s.Bmat = X.transpose() * s.Rhat;
  s.Bmat.noalias() -= s.Bhat * s.Cmat.transpose();
  if (!all_finite(s.Bmat)) throw DivergenceError(s.k, "non-finite B");

  const auto f = make_f(s.MuB_hat, s.TauB_hat);
  Matrix next(s.Bmat.rows(), s.Bmat.cols());
  if (const auto aff = f->affine()) {
    next = (s.Bmat * aff->gain.transpose()).rowwise() + aff->offset.transpose();
  } else {
    for (Eigen::Index j = 0; j < s.Bmat.rows(); ++j) next.row(j) = f->apply(s.Bmat.row(j).transpose()).transpose();
  }
  s.Bhat = std::move(next);
  if (!all_finite(s.Bhat)) throw DivergenceError(s.k, "non-finite Bhat");
  s.Fmat = average_jacobian(*f, s.Bmat, n);
  s.Sigma_hat = estimate_sigma_next(s.Bmat, s.Bhat, *f, prior, s.Sigma_hat, s.MuB_hat, n);
  if (!all_finite(s.Sigma_hat)) throw DivergenceError(s.k, "non-finite Sigma");
  // Σ̂₁₁ is exact while the other blocks are empirical, so finite-p noise can
  // push Σ̂ slightly outside the PSD cone.
  bool clipped = false;
  if (f->bayes_optimal()) {
    const Eigen::Index l = s.Bhat.cols();
    const Matrix tied = clip_relative(s.Sigma_hat.bottomRightCorner(l, l), s.Sigma_hat.topLeftCorner(l, l),
                                      1.0 - kTiedVarianceFloor, &clipped);
    s.Sigma_hat = assemble(s.Sigma_hat.topLeftCorner(l, l), tied, tied);
  } else {
    s.Sigma_hat = psd_project(s.Sigma_hat, &clipped);
  }
  if (clipped) ++s.psd_projections;
  ++s.k;
}

AmpRun run_amp(AmpState state, const Instance& instance, const SignalPrior& prior, const SignalDenoiserFactory& make_f,
               const ChannelDenoiserFactory& make_g, int iterations, const AmpOptions& options, const AmpHook& hook) {
  AmpRun run;
  run.trace.push_back(signal_metrics(state.k, state.Bhat, instance.B));
  for (int it = 0; it < iterations; ++it) {
    amp_step(state, instance.X, instance.Y, prior, make_f, make_g, options);
    IterationMetrics m = signal_metrics(state.k, state.Bhat, instance.B);
    m.flagged_rows = state.flagged_rows;
    run.trace.push_back(std::move(m));
    if (hook) hook(state);
  }
  run.state = std::move(state);
  return run;
}

}  // namespace matamp
