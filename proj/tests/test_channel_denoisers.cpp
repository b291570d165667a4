#include <doctest.h>

#include <cmath>

#include "matamp/denoisers.hpp"
#include "matamp/oracles.hpp"
#include "matamp/rng.hpp"

using namespace matamp;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// A fixed PSD Σ for (Z, Z^k) with L = 2.
Matrix fixed_sigma() {
  Matrix s(4, 4);
  s << 1.0, 0.1, 0.6, 0.05,  //
      0.1, 1.0, 0.05, 0.5,   //
      0.6, 0.05, 0.8, 0.1,   //
      0.05, 0.5, 0.1, 0.7;
  return s;
}

// E[Z | Z^k = u, Z₁ + ε = y] by direct Gaussian conditioning on the 5-vector.
Vector single_branch_mean(const Matrix& sigma, double noise, const Vector& u, double y) {
  Matrix joint(5, 5);
  joint.topLeftCorner(4, 4) = sigma;
  joint.block(0, 4, 4, 1) = sigma.block(0, 0, 4, 1);
  joint.block(4, 0, 1, 4) = sigma.block(0, 0, 1, 4);
  joint(4, 4) = sigma(0, 0) + noise * noise;
  Vector obs(3);
  obs << u, y;
  const Matrix cross = joint.block(0, 2, 2, 3);
  const Matrix block = joint.block(2, 2, 3, 3);
  return cross * block.ldlt().solve(obs);
}

}  // namespace

TEST_SUITE("channel_denoisers") {
  TEST_CASE("alpha = 1 collapses onto the single-branch conditional") {
    const Matrix sigma = fixed_sigma();
    MlrPosteriorDenoiser g(sigma, {1.0, 0.0}, 0.3);
    const Vector u = vec2(0.4, -0.2);
    const double y = 0.7;
    const Vector w = g.label_posterior(u, y);
    CHECK(w(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK((g.posterior_mean(u, y) - single_branch_mean(sigma, 0.3, u, y)).norm() < 1e-10);
    const Vector grid = grid_posterior_mean(Channel::mlr2(1.0, 0.3), sigma, u, y).mean;
    CHECK((grid - single_branch_mean(sigma, 0.3, u, y)).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("an uninformative channel gives g close to zero") {
    const Matrix sigma = fixed_sigma();
    MlrPosteriorDenoiser g(sigma, {0.7, 0.3}, 1e6);
    CHECK(g.apply(vec2(0.4, -0.1), 0.9, 0).cwiseAbs().maxCoeff() < 1e-3);
    MonteCarloPosteriorDenoiser mc(sigma, Channel::mar(vec2(1.0, 0.0), 1e6), 100000, 3, 0);
    CHECK(mc.apply(vec2(0.4, -0.1), 0.9, 0).cwiseAbs().maxCoeff() < 2e-2);
  }

  TEST_CASE("mlr posterior mean matches grid integration") {
    const Matrix sigma = fixed_sigma();
    const Channel ch = Channel::mlr2(0.7, 0.5);
    MlrPosteriorDenoiser g(sigma, ch.proportions(), ch.sigma());
    GridSpec spec;
    spec.nodes = 600;
    const Vector u = vec2(0.4, -0.1);
    const Vector grid = grid_posterior_mean(ch, sigma, u, 0.9, spec).mean;
    CHECK((g.posterior_mean(u, 0.9) - grid).cwiseAbs().maxCoeff() < 1e-4);
  }

  TEST_CASE("label posteriors sum to one") {
    Rng rng(5);
    MlrPosteriorDenoiser g2(fixed_sigma(), {0.7, 0.3}, 0.2);
    Matrix s3 = Matrix::Identity(6, 6);
    s3.topRightCorner(3, 3) = 0.5 * Matrix::Identity(3, 3);
    s3.bottomLeftCorner(3, 3) = 0.5 * Matrix::Identity(3, 3);
    MlrPosteriorDenoiser g3(s3, {0.5, 0.3, 0.2}, 0.0);
    for (int i = 0; i < 50; ++i) {
      const double y = 2.0 * rng.normal();
      CHECK(std::abs(g2.label_posterior(rng.normal_vector(2), y).sum() - 1.0) < 1e-12);
      CHECK(std::abs(g3.label_posterior(rng.normal_vector(3), y).sum() - 1.0) < 1e-12);
    }
  }

  TEST_CASE("augmented covariance carries σ² on the observation diagonal") {
    const Matrix sigma = fixed_sigma();
    MlrPosteriorDenoiser g(sigma, {0.7, 0.3}, 0.5);
    for (int l = 0; l < 2; ++l) {
      const Matrix a = g.augmented_covariance(l);
      CHECK(a.rows() == 5);
      CHECK(a(4, 4) == doctest::Approx(sigma(l, l) + 0.25));
      CHECK((a - a.transpose()).norm() == 0.0);
    }
  }

  TEST_CASE("Monte Carlo and closed form agree on the mlr channel") {
    const Matrix sigma = fixed_sigma();
    const Channel ch = Channel::mlr2(0.7, 0.5);
    MlrPosteriorDenoiser exact(sigma, ch.proportions(), ch.sigma());
    MonteCarloPosteriorDenoiser mc(sigma, ch, 200000, 17, 0);
    const Vector u = vec2(0.4, -0.1);
    const auto est = mc.posterior_mean(u, 0.9, 0);
    REQUIRE(est.ok);
    const Vector z = (est.mean - exact.posterior_mean(u, 0.9)).cwiseQuotient(est.standard_error);
    CHECK(z.cwiseAbs().maxCoeff() < 3.0);
  }

  TEST_CASE("degenerate conditional covariance takes the pseudoinverse path") {
    Matrix sigma(4, 4);
    const Matrix s = 0.5 * Matrix::Identity(2, 2);
    sigma << s, s, s, s;
    MonteCarloPosteriorDenoiser g(sigma, Channel::mar(Vector::Zero(2), 0.3), 500, 1, 0);
    const Vector out = g.apply(vec2(0.3, -0.2), 0.4, 0);
    CHECK(out.allFinite());
    CHECK(out.norm() < 1e-12);
  }

  TEST_CASE("MAR Monte Carlo posterior mean matches grid integration") {
    const Matrix sigma = fixed_sigma();
    const Channel ch = Channel::mar(vec2(1.0, 0.0), 0.4);
    MonteCarloPosteriorDenoiser g(sigma, ch, 1000000, 23, 0);
    const Vector u = vec2(0.2, 0.5);
    const auto est = g.posterior_mean(u, 1.3, 0);
    GridSpec spec;
    spec.nodes = 800;
    const Vector grid = grid_posterior_mean(ch, sigma, u, 1.3, spec).mean;
    CHECK(((est.mean - grid).cwiseQuotient(est.standard_error)).cwiseAbs().maxCoeff() < 3.0);
  }

  TEST_CASE("E[Z | Y] limits") {
    const Matrix s11 = 0.5 * Matrix::Identity(2, 2);
    const auto flat = e_z_given_y(0.7, s11, Channel::mar(vec2(1.0, 1.0), 1e6), 100000, 4);
    CHECK(flat.mean.cwiseAbs().maxCoeff() < 4.0 * flat.standard_error.maxCoeff() + 1e-3);

    const double y = 1e6 + 0.6;
    const auto sat = e_z_given_y(y, s11, Channel::mar(vec2(1e6, 0.0), 0.4), 100000, 5);
    const double expect = (y - 1e6) * 0.5 / (0.5 + 0.16);
    CHECK(std::abs(sat.mean(0) - expect) < 4.0 * sat.standard_error(0));
  }

  TEST_CASE("E[Z | Y] matches grid integration") {
    const Matrix s11 = 0.5 * Matrix::Identity(2, 2);
    const Channel ch = Channel::mar(vec2(1.0, 1.0), 0.4);
    const auto est = e_z_given_y(1.8, s11, ch, 1000000, 6);
    GridSpec spec;
    spec.nodes = 800;
    const Vector grid = grid_posterior_mean_marginal(ch, s11, 1.8, spec).mean;
    CHECK(((est.mean - grid).cwiseQuotient(est.standard_error)).cwiseAbs().maxCoeff() < 3.0);
  }

  TEST_CASE("rows with equal y share one E[Z | Y] evaluation") {
    Vector y(4);
    y << 0.3, 1.1, 0.3, 1.1;
    const Matrix ez = e_z_given_y_rows(y, 0.5 * Matrix::Identity(2, 2), Channel::mar(vec2(1.0, 1.0), 0.2), 2000, 8);
    CHECK(ez.row(0) == ez.row(2));
    CHECK(ez.row(1) == ez.row(3));
  }
}
