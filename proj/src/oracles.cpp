#include "matamp/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "matamp/rng.hpp"

namespace matamp {

Matrix fd_jacobian(const VectorMap& fn, const Vector& x, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_jacobian: step must be positive");
  const Vector f0 = fn(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vector xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    j.col(c) = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return j;
}

namespace {

// Square root of a PSD matrix through its eigen-decomposition.
Matrix sqrt_psd(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vector trapezoid_mean(const Channel& channel, const Vector& centre, const Matrix& root, double y, int nodes,
                      double width) {
  const int dim = static_cast<int>(centre.size());
  const double step = 2.0 * width / (nodes - 1);
  std::vector<double> axis(static_cast<std::size_t>(nodes)), wt(static_cast<std::size_t>(nodes));
  for (int i = 0; i < nodes; ++i) {
    axis[static_cast<std::size_t>(i)] = -width + step * i;
    const double edge = (i == 0 || i == nodes - 1) ? 0.5 : 1.0;
    const double a = axis[static_cast<std::size_t>(i)];
    wt[static_cast<std::size_t>(i)] = edge * std::exp(-0.5 * a * a);
  }
  // Log-likelihood values can be far from zero; rescale by the running max.
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  std::vector<Vector> points;
  std::vector<double> base;
  const long total = static_cast<long>(std::pow(nodes, dim));
  logs.reserve(static_cast<std::size_t>(total));
  points.reserve(static_cast<std::size_t>(total));
  base.reserve(static_cast<std::size_t>(total));
  Vector w(dim);
  for (long t = 0; t < total; ++t) {
    long r = t;
    double weight = 1.0;
    for (int d = 0; d < dim; ++d) {
      const int i = static_cast<int>(r % nodes);
      r /= nodes;
      w(d) = axis[static_cast<std::size_t>(i)];
      weight *= wt[static_cast<std::size_t>(i)];
    }
    const Vector z = centre + root * w;
    const double ll = channel.log_likelihood(y, z);
    shift = std::max(shift, ll);
    logs.push_back(ll);
    points.push_back(z);
    base.push_back(weight);
  }
  Vector num = Vector::Zero(dim);
  double den = 0.0;
  for (std::size_t t = 0; t < logs.size(); ++t) {
    const double v = base[t] * std::exp(logs[t] - shift);
    num += v * points[t];
    den += v;
  }
  if (!(den > 0.0)) throw NumericalError("grid oracle: likelihood vanishes on the grid");
  return num / den;
}

GridResult refine(const Channel& channel, const Vector& centre, const Matrix& root, double y, const GridSpec& spec) {
  if (spec.nodes < 3) throw ConfigError("grid oracle: at least 3 nodes");
  const Vector coarse = trapezoid_mean(channel, centre, root, y, spec.nodes, spec.width);
  const Vector fine = trapezoid_mean(channel, centre, root, y, 2 * spec.nodes - 1, spec.width);
  GridResult r;
  r.mean = fine;
  r.refinement_change = (fine - coarse).norm() / std::max(fine.norm(), 1e-12);
  if (r.refinement_change > spec.refine_tol)
    throw NumericalError("grid oracle: refinement changed the result by " + std::to_string(r.refinement_change));
  return r;
}

}  // namespace

GridResult grid_posterior_mean(const Channel& channel, const Matrix& sigma, const Vector& u, double y,
                               const GridSpec& spec) {
  const Eigen::Index l = sigma.rows() / 2;
  const Matrix s11 = sigma.topLeftCorner(l, l);
  const Matrix s12 = sigma.topRightCorner(l, l);
  const Matrix s22 = sigma.bottomRightCorner(l, l);
  const Matrix gain = s22.completeOrthogonalDecomposition().solve(s12.transpose()).transpose();
  const Matrix cov = s11 - gain * s12.transpose();
  return refine(channel, gain * u, sqrt_psd(cov), y, spec);
}

GridResult grid_posterior_mean_marginal(const Channel& channel, const Matrix& sigma11, double y,
                                        const GridSpec& spec) {
  return refine(channel, Vector::Zero(sigma11.rows()), sqrt_psd(sigma11), y, spec);
}

SteinResult stein_check(const Matrix& sigma, const VectorMap& h, const JacobianMap& jacobian, int samples,
                        std::uint64_t seed) {
  if (samples < 2) throw ConfigError("stein_check: need at least two samples");
  const Eigen::Index d = sigma.rows();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw ConfigError("stein_check: covariance must be positive definite");
  const Matrix root = llt.matrixL();
  const Matrix prec = llt.solve(Matrix::Identity(d, d));
  Rng rng(derive_seed(seed, {tag(Stream::posterior_mc), 0x57e1aULL}));

  Matrix sum, sum_sq;
  for (int i = 0; i < samples; ++i) {
    const Vector x = root * rng.normal_vector(d);
    const Vector hx = h(x);
    const Matrix grad = jacobian ? jacobian(x) : fd_jacobian(h, x);
    const Matrix r = grad - (prec * x * hx.transpose()).transpose();
    if (i == 0) {
      sum = Matrix::Zero(r.rows(), r.cols());
      sum_sq = Matrix::Zero(r.rows(), r.cols());
    }
    sum += r;
    sum_sq += r.cwiseAbs2();
  }
  const double m = static_cast<double>(samples);
  SteinResult out;
  out.residual = sum / m;
  const Matrix var = (sum_sq / m - out.residual.cwiseAbs2()) * (m / (m - 1.0));
  out.standard_error = (var.cwiseMax(0.0) / m).cwiseSqrt();
  return out;
}

double MomentDiscrepancy::max() const { return std::max({mean, covariance, quadratic, absolute, product}); }

MomentDiscrepancy empirical_vs_se(const Matrix& bk, const Matrix& b, const Matrix& mu, const Matrix& tau) {
  if (bk.rows() != b.rows() || bk.cols() != b.cols()) throw ConfigError("empirical_vs_se: shape mismatch");
  const double p = static_cast<double>(b.rows());
  const Matrix signal = b * mu.transpose();
  const Matrix resid = bk - signal;
  const Vector mean = resid.colwise().mean();
  const Matrix centred = resid.rowwise() - mean.transpose();
  const Matrix cov = centred.transpose() * centred / p;

  MomentDiscrepancy d;
  d.mean = mean.cwiseAbs().maxCoeff();
  d.covariance = (cov - tau).cwiseAbs().maxCoeff();
  for (Eigen::Index l = 0; l < b.cols(); ++l) {
    const double quad_emp = bk.col(l).squaredNorm() / p;
    const double quad_se = signal.col(l).squaredNorm() / p + tau(l, l);
    const double abs_emp = resid.col(l).cwiseAbs().mean();
    const double abs_se = std::sqrt(2.0 * std::max(tau(l, l), 0.0) / std::numbers::pi);
    const double prod_emp = bk.col(l).dot(b.col(l)) / p;
    const double prod_se = signal.col(l).dot(b.col(l)) / p;
    d.quadratic = std::max(d.quadratic, std::abs(quad_emp - quad_se));
    d.absolute = std::max(d.absolute, std::abs(abs_emp - abs_se));
    d.product = std::max(d.product, std::abs(prod_emp - prod_se));
  }
  return d;
}

Matrix regression_mu(const Matrix& bk, const Matrix& b) {
  return b.colPivHouseholderQr().solve(bk).transpose();
}

}  // namespace matamp
