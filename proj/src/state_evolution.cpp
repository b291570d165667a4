#include "matamp/state_evolution.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "matamp/amp.hpp"
#include "matamp/linalg.hpp"
#include "matamp/parallel.hpp"
#include "matamp/rng.hpp"

namespace matamp {

namespace {

constexpr int kBatchSize = 4096;
constexpr std::uint64_t kChannelStage = 1;
constexpr std::uint64_t kSignalStage = 2;

struct Moments {
  Matrix a;  // first accumulated outer product
  Matrix b;  // second accumulated outer product
};

// Sums per-batch moments in batch order so the result does not depend on the
// number of threads.
template <class BatchFn>
Moments batched(int samples, int dim, int threads, BatchFn&& fn) {
  const int batches = (samples + kBatchSize - 1) / kBatchSize;
  std::vector<Moments> parts(static_cast<std::size_t>(batches));
  parallel_for(static_cast<std::size_t>(batches), threads, [&](std::size_t b) {
    const int begin = static_cast<int>(b) * kBatchSize;
    const int end = std::min(samples, begin + kBatchSize);
    Moments m{Matrix::Zero(dim, dim), Matrix::Zero(dim, dim)};
    fn(b, begin, end, m);
    parts[b] = std::move(m);
  });
  Moments total{Matrix::Zero(dim, dim), Matrix::Zero(dim, dim)};
  for (const auto& m : parts) {
    total.a += m.a;
    total.b += m.b;
  }
  total.a /= static_cast<double>(samples);
  total.b /= static_cast<double>(samples);
  return total;
}

Matrix assemble(const Matrix& s11, const Matrix& s12, const Matrix& s22) {
  const Eigen::Index l = s11.rows();
  Matrix s(2 * l, 2 * l);
  s << s11, s12, s12.transpose(), s22;
  return symmetrize(s);
}

}  // namespace

SeState se_init(const SignalPrior& prior, double delta) {
  SeState s;
  s.k = 0;
  s.delta = delta;
  s.Sigma = initial_sigma(prior, delta);
  const int l = prior.dim();
  s.MuB = s.TauB = s.NB = Matrix::Zero(l, l);
  std::tie(s.MuTheta, s.TauTheta) = theta_params(s.Sigma, true);
  s.NTheta = effective_noise(s.MuTheta, s.TauTheta);
  return s;
}

std::pair<Matrix, Matrix> theta_params(const Matrix& sigma, bool allow_singular) {
  const Eigen::Index l = sigma.rows() / 2;
  const Matrix s11 = sigma.topLeftCorner(l, l);
  const Matrix s12 = sigma.topRightCorner(l, l);
  const Matrix s21 = sigma.bottomLeftCorner(l, l);
  const Matrix s22 = sigma.bottomRightCorner(l, l);
  Matrix inv;
  if (condition_number(s11) <= kRidgeConditionLimit) {
    inv = s11.fullPivLu().inverse();
  } else {
    if (!allow_singular) throw NumericalError("theta_params: Sigma11 is singular");
    inv = pseudo_inverse(s11);
  }
  const Matrix mu = s21 * inv;
  return {mu, symmetrize(s22 - mu * s12)};
}

Matrix effective_noise(const Matrix& mu, const Matrix& tau) {
  const Matrix inv = inverse_or_pinv(mu);
  return symmetrize(inv * tau * inv.transpose());
}

SeState se_step(const SeState& state, const SeConfig& cfg) {
  const int l = state.dim();
  if (cfg.mc_samples < 1) throw ConfigError("SE mc_samples must be at least 1");
  if (cfg.channel.signal_dim() != l || cfg.prior.dim() != l) throw ConfigError("SE: dimension mismatch");

  // Channel side: Μ_B = E[g g*ᵀ], Τ_B = E[g gᵀ] over (Z, Z^k) ~ N(0, Σ^k).
  const auto g = make_channel_denoiser(cfg.channel, state.Sigma, cfg.g_spec, state.k);
  std::unique_ptr<ChannelDenoiser> g_star;
  if (!g->bayes_optimal()) {
    ChannelDenoiserSpec star = cfg.g_spec;
    star.proportions.reset();
    g_star = make_channel_denoiser(cfg.channel, state.Sigma, star, state.k);
  }
  const Matrix joint = psd_factor(psd_repair(state.Sigma));
  const Moments ch = batched(cfg.mc_samples, l, cfg.threads, [&](std::size_t b, int begin, int end, Moments& m) {
    Rng rng(derive_seed(cfg.seed, {tag(Stream::se), static_cast<std::uint64_t>(state.k), kChannelStage, b}));
    Vector xi(2 * l);
    for (int i = begin; i < end; ++i) {
      for (int c = 0; c < 2 * l; ++c) xi(c) = rng.normal();
      const Vector x = joint * xi;
      const Vector psi = cfg.channel.draw_aux(rng, rng);
      const double y = cfg.channel.eval(x.head(l), psi);
      const auto row = static_cast<std::uint64_t>(i);
      const Vector h = g->apply(x.tail(l), y, row);
      m.a += h * h.transpose();
      m.b += g_star ? Matrix(h * g_star->apply(x.tail(l), y, row).transpose()) : Matrix(h * h.transpose());
    }
  });

  SeState next;
  next.k = state.k + 1;
  next.delta = state.delta;
  next.TauB = psd_repair(ch.a);
  next.MuB = g_star ? ch.b : next.TauB;

  // Signal side: Σ₁₂ = δ⁻¹E[B̄ fᵀ], Σ₂₂ = δ⁻¹E[f fᵀ] with f = f_{k+1}(Μ B̄ + G).
  const auto f = make_signal_denoiser(cfg.f_spec, cfg.prior, next.MuB, next.TauB);
  Matrix cross, gram;
  const auto aff = f->affine();
  if (aff && cfg.prior.kind() == SignalPrior::Kind::gaussian) {
    const Vector& m = cfg.prior.mean();
    const Matrix& c = cfg.prior.cov();
    const Vector ef = aff->offset + aff->gain * next.MuB * m;
    cross = m * ef.transpose() + c * next.MuB.transpose() * aff->gain.transpose();
    gram = ef * ef.transpose() +
           aff->gain * (next.MuB * c * next.MuB.transpose() + next.TauB) * aff->gain.transpose();
  } else {
    const Matrix tau_factor = psd_factor(next.TauB);
    const Moments sg = batched(cfg.mc_samples, l, cfg.threads, [&](std::size_t b, int begin, int end, Moments& m) {
      Rng rng(derive_seed(cfg.seed, {tag(Stream::se), static_cast<std::uint64_t>(state.k), kSignalStage, b}));
      for (int i = begin; i < end; ++i) {
        const Vector bar = cfg.prior.draw(rng);
        const Vector s = next.MuB * bar + tau_factor * rng.normal_vector(l);
        const Vector fv = f->apply(s);
        m.a += bar * fv.transpose();
        m.b += fv * fv.transpose();
      }
    });
    cross = sg.a;
    gram = sg.b;
  }
  const Matrix s11 = state.Sigma.topLeftCorner(l, l);
  const Matrix s22 = gram / state.delta;
  const Matrix s12 = f->bayes_optimal() ? s22 : Matrix(cross / state.delta);
  if (f->bayes_optimal()) {
    // With Σ₁₂ = Σ₂₂, Σ is PSD exactly when 0 ⪯ Σ₂₂ ⪯ Σ₁₁. A zero conditional
    // variance would make g vanish in that direction, hence the floor.
    const Matrix tied = clip_relative(s22, s11, 1.0 - kTiedVarianceFloor);
    next.Sigma = assemble(s11, tied, tied);
  } else {
    next.Sigma = psd_project(assemble(s11, s12, s22));
  }

  std::tie(next.MuTheta, next.TauTheta) = theta_params(next.Sigma, true);
  next.TauTheta = psd_repair(next.TauTheta);
  next.NTheta = effective_noise(next.MuTheta, next.TauTheta);
  next.NB = effective_noise(next.MuB, next.TauB);
  return next;
}

std::vector<SeState> run_se(const SeConfig& config, int iterations) {
  std::vector<SeState> states;
  states.push_back(se_init(config.prior, config.delta));
  for (int k = 0; k < iterations; ++k) states.push_back(se_step(states.back(), config));
  return states;
}

SignalPrediction predict_metrics(const SeState& state) {
  const int l = state.dim();
  const Matrix& s = state.Sigma;
  SignalPrediction out;
  out.corr.resize(l);
  out.mse.resize(l);
  out.degenerate.assign(static_cast<std::size_t>(l), false);
  for (int c = 0; c < l; ++c) {
    const double s11 = s(c, c);
    const double s12 = s(c, l + c);
    const double s22 = s(l + c, l + c);
    const double denom = s11 * s22;
    if (denom > 0.0) {
      out.corr(c) = std::min(1.0, s12 * s12 / denom);
    } else {
      out.corr(c) = 0.0;
      out.degenerate[static_cast<std::size_t>(c)] = true;
    }
    out.mse(c) = state.delta * std::max(0.0, s11 - 2.0 * s12 + s22);
  }
  return out;
}

}  // namespace matamp
