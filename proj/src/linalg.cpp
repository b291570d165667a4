#include "matamp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace matamp {

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

double condition_number(const Matrix& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (smax == 0.0) return std::numeric_limits<double>::infinity();
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

Matrix pseudo_inverse(const Matrix& a, double rtol) {
  if (a.size() == 0) return Matrix(a.cols(), a.rows());
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = rtol * sv(0);
  Vector inv_sv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) inv_sv(i) = (sv(i) > cutoff && sv(i) > 0.0) ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
}

Matrix regularized_inverse(const Matrix& a, bool* ridged) {
  if (ridged) *ridged = false;
  if (a.rows() != a.cols()) throw ConfigError("regularized_inverse: matrix is not square");
  if (a.size() == 0) return a;
  if (condition_number(a) <= kRidgeConditionLimit) return a.fullPivLu().inverse();
  if (ridged) *ridged = true;
  const double tr = a.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) return pseudo_inverse(a);
  const double ridge = kRidgeScale * tr / static_cast<double>(a.rows());
  Matrix shifted = a;
  shifted.diagonal().array() += ridge;
  return shifted.fullPivLu().inverse();
}

Matrix inverse_or_pinv(const Matrix& a, bool* used_pinv) {
  if (used_pinv) *used_pinv = false;
  if (a.size() == 0) return a;
  if (condition_number(a) <= kRidgeConditionLimit) return a.fullPivLu().inverse();
  if (used_pinv) *used_pinv = true;
  return pseudo_inverse(a);
}

Matrix psd_factor(const Matrix& s) {
  const Eigen::Index d = s.rows();
  if (s.cols() != d) throw ConfigError("psd_factor: matrix is not square");
  Matrix f = Matrix::Zero(d, d);
  const double scale = std::max(s.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double zero_tol = 1e-13 * scale;
  const double neg_tol = kPsdTolerance * std::max(1.0, scale);
  for (Eigen::Index j = 0; j < d; ++j) {
    double pivot = s(j, j) - f.row(j).head(j).squaredNorm();
    if (pivot < -neg_tol) throw NumericalError("psd_factor: covariance is not positive semidefinite");
    if (pivot <= zero_tol) continue;
    const double root = std::sqrt(pivot);
    f(j, j) = root;
    for (Eigen::Index i = j + 1; i < d; ++i) {
      f(i, j) = (s(i, j) - f.row(i).head(j).dot(f.row(j).head(j))) / root;
    }
  }
  return f;
}

double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

Matrix psd_repair(const Matrix& s) {
  Matrix sym = symmetrize(s);
  if (sym.size() == 0) return sym;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev(0) >= 0.0) return sym;
  if (ev(0) < -kPsdTolerance * scale) {
    throw NumericalError("psd_repair: eigenvalue " + std::to_string(ev(0)) + " below tolerance");
  }
  ev = ev.cwiseMax(0.0);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Matrix psd_project(const Matrix& s, bool* clipped) {
  Matrix sym = symmetrize(s);
  if (clipped) *clipped = false;
  if (sym.size() == 0) return sym;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.eigenvalues()(0) >= 0.0) return sym;
  if (clipped) *clipped = true;
  const Vector ev = es.eigenvalues().cwiseMax(0.0);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Matrix clip_relative(const Matrix& a, const Matrix& b, double upper, bool* clipped) {
  if (clipped) *clipped = false;
  Eigen::SelfAdjointEigenSolver<Matrix> eb(symmetrize(b));
  const Vector& lb = eb.eigenvalues();
  const double cutoff = 1e-12 * std::max(lb.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  // Whitening restricted to the range of b.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lb.size(); ++i)
    if (lb(i) > cutoff) keep.push_back(i);
  const auto r = static_cast<Eigen::Index>(keep.size());
  Matrix root(b.rows(), r), inv_root(b.rows(), r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const double v = lb(keep[static_cast<std::size_t>(j)]);
    root.col(j) = eb.eigenvectors().col(keep[static_cast<std::size_t>(j)]) * std::sqrt(v);
    inv_root.col(j) = eb.eigenvectors().col(keep[static_cast<std::size_t>(j)]) / std::sqrt(v);
  }
  const Matrix sym = symmetrize(a);
  if (r == 0) {
    if (clipped) *clipped = sym.cwiseAbs().maxCoeff() > 0.0;
    return Matrix::Zero(a.rows(), a.cols());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> ew(symmetrize(inv_root.transpose() * sym * inv_root));
  const Vector ev = ew.eigenvalues().cwiseMax(0.0).cwiseMin(upper);
  const Matrix out = symmetrize(root * ew.eigenvectors() * ev.asDiagonal() * ew.eigenvectors().transpose() *
                                root.transpose());
  const bool changed = (ev - ew.eigenvalues()).cwiseAbs().maxCoeff() > 0.0 ||
                       (out - sym).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sym.cwiseAbs().maxCoeff());
  if (!changed) return sym;
  if (clipped) *clipped = true;
  return out;
}

double operator_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

GaussianLogDensity::GaussianLogDensity(const Matrix& cov, double ridge) {
  Matrix c = symmetrize(cov);
  c.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) throw NumericalError("GaussianLogDensity: covariance not positive definite");
  const Matrix& l = llt.matrixL();
  log_det_ = 2.0 * l.diagonal().array().log().sum();
  precision_ = llt.solve(Matrix::Identity(c.rows(), c.cols()));
  constexpr double kLog2Pi = 1.8378770664093453;
  log_norm_ = -0.5 * (static_cast<double>(c.rows()) * kLog2Pi + log_det_);
}

double GaussianLogDensity::operator()(const Vector& x) const {
  return log_norm_ - 0.5 * x.dot(precision_ * x);
}

}  // namespace matamp
