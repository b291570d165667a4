#include <doctest.h>

#include "matamp/em_amp.hpp"

using namespace matamp;

namespace {

Matrix cols(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 2);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    m(i, 0) = *r.begin();
    m(i, 1) = *(r.begin() + 1);
    ++i;
  }
  return m;
}

Matrix swap_cols(const Matrix& m) {
  Matrix out(m.rows(), 2);
  out << m.col(1), m.col(0);
  return out;
}

EmConfig small_config() {
  EmConfig cfg;
  cfg.m_max = 2;
  cfg.k_max = 2;
  cfg.mc_samples = 200;
  cfg.ez_samples = 2000;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_SUITE("em_amp") {
  TEST_CASE("intercept update is the branch mean of Y − E[Z | Y]") {
    Vector y(4);
    y << 3.0, 5.0, 1.0, 2.0;
    const Matrix theta = cols({{2.0, 0.0}, {2.0, 0.0}, {0.0, 2.0}, {0.0, 3.0}});
    const Matrix ez = cols({{1.0, 0.0}, {2.0, 0.0}, {0.0, 0.5}, {0.0, 1.5}});
    const EmUpdate up = em_update(y, theta, Vector::Zero(2), ez);
    CHECK(up.count1 == 2);
    CHECK(up.count2 == 2);
    CHECK(up.b(0) == doctest::Approx(2.5));
    CHECK(up.b(1) == doctest::Approx(0.5));
    CHECK_FALSE(up.empty_branch);
  }

  TEST_CASE("an empty branch keeps its intercept") {
    Vector y(2);
    y << 3.0, 5.0;
    const Matrix theta = cols({{0.0, 2.0}, {0.0, 2.0}});
    const Matrix ez = cols({{0.0, 1.0}, {0.0, 2.0}});
    Vector b(2);
    b << 0.7, 0.0;
    const EmUpdate up = em_update(y, theta, b, ez);
    CHECK(up.empty_branch);
    CHECK(up.count1 == 0);
    CHECK(up.b(0) == 0.7);
    CHECK(up.b(1) == doctest::Approx(2.5));
  }

  TEST_CASE("ties go to the second branch") {
    Vector y(1);
    y << 1.0;
    const EmUpdate up = em_update(y, cols({{1.0, 1.0}}), Vector::Zero(2), cols({{0.0, 0.0}}));
    CHECK(up.count2 == 1);
  }

  TEST_CASE("exact projections make the true intercepts a fixed point") {
    Vector b(2);
    b << 1.0, -0.5;
    const Channel ch = Channel::mar(b, 0.0);
    const auto inst = generate_instance(ch, SignalPrior::gaussian_rho(0.0), 300, 100, 4);
    const Matrix z = inst.X * inst.B;
    const EmUpdate up = em_update(inst.Y, z, b, z);
    CHECK((up.b - b).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("relabelling the branches relabels the update") {
    Vector b(2);
    b << 0.4, -0.2;
    const auto inst = generate_instance(Channel::mar(b, 0.1), SignalPrior::gaussian_rho(0.0), 200, 80, 9);
    const Matrix z = inst.X * inst.B;
    Matrix ez = 0.5 * z;
    const EmUpdate a = em_update(inst.Y, z, b, ez);
    const EmUpdate c = em_update(inst.Y, swap_cols(z), b.reverse(), swap_cols(ez));
    CHECK(a.b(0) == c.b(1));
    CHECK(a.b(1) == c.b(0));
    CHECK(a.count1 == c.count2);
  }

  TEST_CASE("shape errors") {
    Vector y = Vector::Zero(3);
    CHECK_THROWS_AS(em_update(y, Matrix::Zero(3, 3), Vector::Zero(2), Matrix::Zero(3, 2)), ConfigError);
    CHECK_THROWS_AS(em_update(y, Matrix::Zero(2, 2), Vector::Zero(2), Matrix::Zero(3, 2)), ConfigError);
  }

  TEST_CASE("runs") {
    Vector b(2);
    b << 1.0, 1.0;
    const Channel ch = Channel::mar(b, 0.1);
    const auto prior = SignalPrior::gaussian_rho(0.0);
    const auto inst = generate_instance(ch, prior, 400, 100, 3);

    SUBCASE("no outer iterations returns the initial intercepts") {
      EmConfig cfg = small_config();
      cfg.m_max = 0;
      const EmResult r = em_amp_run(inst, prior, ch, cfg);
      CHECK(r.trace.size() == 1);
      CHECK(r.b.isZero(0.0));
    }
    SUBCASE("oracle variant keeps the truth") {
      EmConfig cfg = small_config();
      cfg.oracle = true;
      const EmResult r = em_amp_run(inst, prior, ch, cfg);
      CHECK(r.trace.size() == 3);
      CHECK(r.b == b);
      for (const auto& it : r.trace) CHECK(it.b == b);
      CHECK(r.trace.back().corr_signal(0) > r.trace.front().corr_signal(0));
    }
    SUBCASE("reproducible and finite") {
      const EmResult r1 = em_amp_run(inst, prior, ch, small_config());
      const EmResult r2 = em_amp_run(inst, prior, ch, small_config());
      CHECK(r1.b == r2.b);
      CHECK(r1.Bhat == r2.Bhat);
      CHECK(r1.b.allFinite());
      CHECK(r1.trace.size() == 3);
      for (const auto& it : r1.trace) CHECK(it.corr.allFinite());
    }
    SUBCASE("cold starts differ from warm starts only after the first update") {
      EmConfig cold = small_config();
      cold.warm_start = false;
      const EmResult a = em_amp_run(inst, prior, ch, small_config());
      const EmResult c = em_amp_run(inst, prior, ch, cold);
      CHECK(a.trace[1].b == c.trace[1].b);
    }
  }

  TEST_CASE("the channel must be two-intercept max-affine") {
    const auto prior = SignalPrior::gaussian_rho(0.0);
    const Channel ch = Channel::mlr2(0.5, 0.1);
    const auto inst = generate_instance(ch, prior, 40, 20, 1);
    CHECK_THROWS_AS(em_amp_run(inst, prior, ch, small_config()), ConfigError);
  }

  TEST_CASE("augmented correlation") {
    Vector beta(2);
    beta << 1.0, 0.0;
    CHECK(augmented_correlation(beta, 1.0, beta, 1.0) == doctest::Approx(1.0));
    CHECK(augmented_correlation(beta, 0.0, Vector::Zero(2), 1.0) == 0.0);
  }
}
