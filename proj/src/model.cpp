#include "matamp/model.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>

#include "matamp/linalg.hpp"

namespace matamp {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274;

double log_normal_pdf(double x, double sigma) {
  const double t = x / sigma;
  return -0.5 * t * t - std::log(sigma) - kLogSqrt2Pi;
}

}  // namespace

// ---------------------------------------------------------------- SignalPrior

SignalPrior SignalPrior::gaussian(Vector mean, Matrix cov) {
  if (mean.size() == 0) throw ConfigError("gaussian prior: empty mean");
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw ConfigError("gaussian prior: covariance shape does not match mean");
  }
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
    throw ConfigError("gaussian prior: covariance is not symmetric");
  }
  SignalPrior p;
  p.kind_ = Kind::gaussian;
  p.mean_ = std::move(mean);
  p.cov_ = symmetrize(cov);
  try {
    p.factor_ = psd_factor(p.cov_);
  } catch (const NumericalError&) {
    throw ConfigError("gaussian prior: covariance is not positive semidefinite");
  }
  return p;
}

SignalPrior SignalPrior::gaussian_rho(double rho) {
  if (rho < -1.0 || rho > 1.0) throw ConfigError("gaussian prior: rho must lie in [-1, 1]");
  Matrix cov(2, 2);
  cov << 1.0, rho, rho, 1.0;
  return gaussian(Vector::Zero(2), cov);
}

SignalPrior SignalPrior::sparse_discrete(double eps, int dim) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("sparse prior: eps must lie in [0, 1]");
  if (dim < 1) throw ConfigError("sparse prior: dimension must be positive");
  SignalPrior p;
  p.kind_ = Kind::sparse_discrete;
  p.eps_ = eps;
  p.mean_ = Vector::Zero(dim);
  p.cov_ = eps * Matrix::Identity(dim, dim);
  return p;
}

std::vector<SignalPrior::Atom> SignalPrior::atoms() const {
  if (kind_ != Kind::sparse_discrete) throw ConfigError("atoms(): prior is not discrete");
  const int d = dim();
  const std::array<double, 3> values{-1.0, 0.0, 1.0};
  const std::array<double, 3> masses{eps_ / 2.0, 1.0 - eps_, eps_ / 2.0};
  int count = 1;
  for (int l = 0; l < d; ++l) count *= 3;
  std::vector<Atom> out;
  out.reserve(count);
  for (int code = 0; code < count; ++code) {
    Vector v(d);
    double w = 1.0;
    int c = code;
    for (int l = 0; l < d; ++l) {
      v(l) = values[c % 3];
      w *= masses[c % 3];
      c /= 3;
    }
    out.push_back({std::move(v), w});
  }
  return out;
}

Vector SignalPrior::draw(Rng& rng) const {
  const int d = dim();
  if (kind_ == Kind::gaussian) return mean_ + factor_ * rng.normal_vector(d);
  Vector v(d);
  for (int l = 0; l < d; ++l) {
    const double u = rng.uniform();
    v(l) = u < eps_ / 2.0 ? 1.0 : (u < eps_ ? -1.0 : 0.0);
  }
  return v;
}

std::string SignalPrior::name() const {
  std::ostringstream os;
  if (kind_ == Kind::sparse_discrete) {
    os << "sparse(eps=" << eps_ << ")";
  } else {
    os << "gaussian";
  }
  return os.str();
}

PriorMoments prior_moments(const SignalPrior& prior) {
  return {prior.mean(), prior.cov(), prior.second_moment()};
}

Matrix sample_prior(const SignalPrior& prior, int p, std::uint64_t seed) {
  if (p < 1) throw ConfigError("sample_prior: p must be positive");
  Rng rng(seed);
  Matrix b(p, prior.dim());
  for (int j = 0; j < p; ++j) b.row(j) = prior.draw(rng).transpose();
  return b;
}

// -------------------------------------------------------------------- Channel

Channel Channel::mlr2(double alpha, double sigma) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("mlr2: alpha must lie in [0, 1]");
  if (!(sigma >= 0.0)) throw ConfigError("mlr2: sigma must be non-negative");
  Channel c;
  c.kind_ = Kind::mlr2;
  c.sigma_ = sigma;
  c.proportions_ = {alpha, 1.0 - alpha};
  return c;
}

Channel Channel::mlr3(const std::vector<double>& proportions, double sigma) {
  if (proportions.size() != 3) throw ConfigError("mlr3: expected three proportions");
  for (double a : proportions) {
    if (!(a >= 0.0)) throw ConfigError("mlr3: proportions must be non-negative");
  }
  if (std::abs(std::accumulate(proportions.begin(), proportions.end(), 0.0) - 1.0) > 1e-12) {
    throw ConfigError("mlr3: proportions must sum to 1");
  }
  if (!(sigma >= 0.0)) throw ConfigError("mlr3: sigma must be non-negative");
  Channel c;
  c.kind_ = Kind::mlr3;
  c.sigma_ = sigma;
  c.proportions_ = proportions;
  return c;
}

Channel Channel::mar(Vector intercepts, double sigma) {
  if (intercepts.size() < 1) throw ConfigError("mar: at least one intercept required");
  if (!(sigma >= 0.0)) throw ConfigError("mar: sigma must be non-negative");
  Channel c;
  c.kind_ = Kind::mar;
  c.sigma_ = sigma;
  c.intercepts_ = std::move(intercepts);
  return c;
}

Channel Channel::moe(double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("moe: sigma must be non-negative");
  Channel c;
  c.kind_ = Kind::moe;
  c.sigma_ = sigma;
  return c;
}

Channel Channel::with_proportions(const std::vector<double>& proportions) const {
  if (!is_mlr()) throw ConfigError("with_proportions: channel is not a mixture");
  if (kind_ == Kind::mlr2) {
    if (proportions.size() != 2) throw ConfigError("with_proportions: expected two proportions");
    return mlr2(proportions[0], sigma_);
  }
  return mlr3(proportions, sigma_);
}

Channel Channel::with_intercepts(Vector intercepts) const {
  if (kind_ != Kind::mar) throw ConfigError("with_intercepts: channel is not max-affine");
  if (intercepts.size() != intercepts_.size()) throw ConfigError("with_intercepts: wrong intercept count");
  return mar(std::move(intercepts), sigma_);
}

int Channel::signal_dim() const {
  switch (kind_) {
    case Kind::mlr2: return 2;
    case Kind::mlr3: return 3;
    case Kind::mar: return static_cast<int>(intercepts_.size());
    case Kind::moe: return 4;
  }
  return 0;
}

int Channel::aux_dim() const { return kind_ == Kind::mar ? 1 : 2; }

double Channel::density_sigma() const { return std::max(sigma_, kMinDensitySigma); }

std::string Channel::name() const {
  switch (kind_) {
    case Kind::mlr2: return "mlr2";
    case Kind::mlr3: return "mlr3";
    case Kind::mar: return "mar";
    case Kind::moe: return "moe";
  }
  return "?";
}

int Channel::mar_branch(const Vector& z) const {
  int best = 0;
  double best_value = z(0) + intercepts_(0);
  for (Eigen::Index l = 1; l < z.size(); ++l) {
    const double v = z(l) + intercepts_(l);
    if (v >= best_value) {
      best = static_cast<int>(l);
      best_value = v;
    }
  }
  return best;
}

double Channel::moe_gate(const Vector& z) {
  // exp(z3) / (exp(z3) + exp(z4)), evaluated without overflow
  const double d = z(3) - z(2);
  if (d > 0.0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

double Channel::eval(const Vector& z, const Vector& psi) const {
  switch (kind_) {
    case Kind::mlr2:
    case Kind::mlr3:
      return z(static_cast<Eigen::Index>(psi(0))) + psi(1);
    case Kind::mar: {
      const int b = mar_branch(z);
      return z(b) + intercepts_(b) + psi(0);
    }
    case Kind::moe:
      return (psi(0) <= moe_gate(z) ? z(0) : z(1)) + psi(1);
  }
  return 0.0;
}

Vector Channel::draw_aux(Rng& latent_rng, Rng& noise_rng) const {
  Vector psi(aux_dim());
  switch (kind_) {
    case Kind::mlr2:
    case Kind::mlr3: {
      const double u = latent_rng.uniform();
      double acc = 0.0;
      int label = static_cast<int>(proportions_.size()) - 1;
      for (std::size_t l = 0; l < proportions_.size(); ++l) {
        acc += proportions_[l];
        if (u < acc) {
          label = static_cast<int>(l);
          break;
        }
      }
      // zero-mass trailing components must never be selected
      while (label > 0 && proportions_[label] == 0.0) --label;
      psi(0) = label;
      psi(1) = sigma_ * noise_rng.normal();
      break;
    }
    case Kind::mar:
      psi(0) = sigma_ * noise_rng.normal();
      break;
    case Kind::moe:
      psi(0) = latent_rng.uniform();
      psi(1) = sigma_ * noise_rng.normal();
      break;
  }
  return psi;
}

double Channel::log_likelihood(double y, const Vector& z) const {
  const double s = density_sigma();
  switch (kind_) {
    case Kind::mlr2:
    case Kind::mlr3: {
      std::array<double, 3> terms{};
      const std::size_t m = proportions_.size();
      for (std::size_t l = 0; l < m; ++l) {
        terms[l] = proportions_[l] > 0.0
                       ? std::log(proportions_[l]) + log_normal_pdf(y - z(static_cast<Eigen::Index>(l)), s)
                       : -std::numeric_limits<double>::infinity();
      }
      return log_sum_exp(std::span<const double>(terms.data(), m));
    }
    case Kind::mar: {
      const int b = mar_branch(z);
      return log_normal_pdf(y - z(b) - intercepts_(b), s);
    }
    case Kind::moe: {
      const double g = moe_gate(z);
      std::array<double, 2> terms{
          g > 0.0 ? std::log(g) + log_normal_pdf(y - z(0), s) : -std::numeric_limits<double>::infinity(),
          g < 1.0 ? std::log1p(-g) + log_normal_pdf(y - z(1), s) : -std::numeric_limits<double>::infinity()};
      return log_sum_exp(terms);
    }
  }
  return 0.0;
}

// ------------------------------------------------------------------- Instance

Instance generate_instance(const Channel& channel, const SignalPrior& prior, int n, int p, std::uint64_t seed) {
  if (n < 1 || p < 1) throw ConfigError("generate_instance: n and p must be positive");
  if (prior.dim() != channel.signal_dim()) {
    throw ConfigError("generate_instance: prior dimension " + std::to_string(prior.dim()) +
                      " does not match channel " + channel.name());
  }
  Instance inst;
  inst.delta = static_cast<double>(n) / static_cast<double>(p);

  Rng design_rng(derive_seed(seed, {tag(Stream::design)}));
  const double sd = 1.0 / std::sqrt(static_cast<double>(n));
  inst.X.resize(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) inst.X(i, j) = sd * design_rng.normal();
  }

  inst.B = sample_prior(prior, p, derive_seed(seed, {tag(Stream::signal)}));

  Rng latent_rng(derive_seed(seed, {tag(Stream::auxiliary)}));
  Rng noise_rng(derive_seed(seed, {tag(Stream::noise)}));
  inst.Psi.resize(n, channel.aux_dim());
  for (int i = 0; i < n; ++i) inst.Psi.row(i) = channel.draw_aux(latent_rng, noise_rng).transpose();

  const Matrix theta = inst.X * inst.B;
  inst.Y.resize(n);
  inst.labels.resize(n);
  if (channel.kind() == Channel::Kind::moe) inst.gate_draws = inst.Psi.col(0);
  for (int i = 0; i < n; ++i) {
    const Vector z = theta.row(i).transpose();
    const Vector psi = inst.Psi.row(i).transpose();
    inst.Y(i) = channel.eval(z, psi);
    switch (channel.kind()) {
      case Channel::Kind::mlr2:
      case Channel::Kind::mlr3: inst.labels[i] = static_cast<int>(psi(0)); break;
      case Channel::Kind::mar: inst.labels[i] = channel.mar_branch(z); break;
      case Channel::Kind::moe: inst.labels[i] = psi(0) <= Channel::moe_gate(z) ? 0 : 1; break;
    }
  }
  return inst;
}

}  // namespace matamp
