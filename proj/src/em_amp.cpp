#include "matamp/em_amp.hpp"

#include "matamp/rng.hpp"

namespace matamp {

EmUpdate em_update(const Vector& y, const Matrix& theta_hat, const Vector& b, const Matrix& ez) {
  if (theta_hat.cols() != 2 || b.size() != 2 || ez.cols() != 2)
    throw ConfigError("em_update: two intercepts are required");
  if (theta_hat.rows() != y.size() || ez.rows() != y.size()) throw ConfigError("em_update: row counts differ");
  double sum1 = 0.0, sum2 = 0.0;
  EmUpdate out;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (theta_hat(i, 0) + b(0) > theta_hat(i, 1) + b(1)) {
      sum1 += y(i) - ez(i, 0);
      ++out.count1;
    } else {
      sum2 += y(i) - ez(i, 1);
      ++out.count2;
    }
  }
  out.b = b;
  if (out.count1 > 0) out.b(0) = sum1 / out.count1;
  if (out.count2 > 0) out.b(1) = sum2 / out.count2;
  out.empty_branch = out.count1 == 0 || out.count2 == 0;
  return out;
}

double augmented_correlation(const Vector& beta_hat, double b_hat, const Vector& beta, double b) {
  Vector u(beta_hat.size() + 1), v(beta.size() + 1);
  u << beta_hat, b_hat;
  v << beta, b;
  return squared_correlation(u, v);
}

namespace {

EmIteration record(int m, const Vector& b, const Matrix& bhat, const Instance& inst, const Vector& b_true) {
  EmIteration it;
  it.m = m;
  it.b = b;
  it.corr.resize(2);
  it.corr_signal.resize(2);
  for (int l = 0; l < 2; ++l) {
    it.corr(l) = augmented_correlation(bhat.col(l), b(l), inst.B.col(l), b_true(l));
    it.corr_signal(l) = squared_correlation(bhat.col(l), inst.B.col(l));
  }
  return it;
}

}  // namespace

EmResult em_amp_run(const Instance& inst, const SignalPrior& prior, const Channel& channel, const EmConfig& cfg) {
  if (channel.kind() != Channel::Kind::mar || channel.signal_dim() != 2)
    throw ConfigError("EM-AMP needs a two-intercept max-affine channel");
  if (cfg.m_max < 0 || cfg.k_max < 0) throw ConfigError("m_max and k_max must be non-negative");
  const Vector b_true = channel.intercepts();
  const auto make_f = signal_denoiser_factory(cfg.f_spec, prior);
  const std::uint64_t init_seed = derive_seed(cfg.seed, {tag(Stream::init)});

  auto g_factory = [&](const Vector& b, int m) {
    ChannelDenoiserSpec spec;
    spec.mc_samples = cfg.mc_samples;
    spec.seed = derive_seed(cfg.seed, {tag(Stream::channel_mc), static_cast<std::uint64_t>(m)});
    return channel_denoiser_factory(channel.with_intercepts(b), spec);
  };

  EmResult res;
  AmpState state = amp_init(inst, prior, InitMode::prior_random, init_seed);
  const Matrix sigma11 = state.Sigma_hat.topLeftCorner(2, 2);

  if (cfg.oracle) {
    res.trace.push_back(record(0, b_true, state.Bhat, inst, b_true));
    const auto g = g_factory(b_true, 0);
    for (int m = 0; m < cfg.m_max; ++m) {
      int flagged = 0;
      for (int k = 0; k < cfg.k_max; ++k) {
        amp_step(state, inst.X, inst.Y, prior, make_f, g);
        flagged += state.flagged_rows;
      }
      EmIteration it = record(m + 1, b_true, state.Bhat, inst, b_true);
      it.flagged_rows = flagged;
      res.trace.push_back(std::move(it));
    }
    res.b = b_true;
    res.Bhat = state.Bhat;
    res.ThetaHat = inst.X * state.Bhat;
    return res;
  }

  Vector b = Vector::Zero(2);
  res.trace.push_back(record(0, b, state.Bhat, inst, b_true));
  for (int m = 0; m < cfg.m_max; ++m) {
    const Channel current = channel.with_intercepts(b);
    const Matrix ez = e_z_given_y_rows(inst.Y, sigma11, current, cfg.ez_samples,
                                       derive_seed(cfg.seed, {tag(Stream::posterior_mc), static_cast<std::uint64_t>(m)}));
    if (!cfg.warm_start && m > 0) state = amp_init(inst, prior, InitMode::prior_random, init_seed);
    const auto g = g_factory(b, m);
    int flagged = 0;
    for (int k = 0; k < cfg.k_max; ++k) {
      amp_step(state, inst.X, inst.Y, prior, make_f, g);
      flagged += state.flagged_rows;
    }
    const Matrix theta_hat = inst.X * state.Bhat;
    const EmUpdate up = em_update(inst.Y, theta_hat, b, ez);
    b = up.b;
    EmIteration it = record(m + 1, b, state.Bhat, inst, b_true);
    it.count1 = up.count1;
    it.count2 = up.count2;
    it.empty_branch = up.empty_branch;
    it.flagged_rows = flagged;
    res.trace.push_back(std::move(it));
    res.ThetaHat = theta_hat;
  }
  res.b = b;
  res.Bhat = state.Bhat;
  if (res.ThetaHat.size() == 0) res.ThetaHat = inst.X * state.Bhat;
  return res;
}

}  // namespace matamp
