#include "doctest.h"

#include "nsfs/follmer.hpp"
#include "nsfs/models.hpp"
#include "nsfs/sde.hpp"
#include "test_util.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <atomic>
#include <cmath>

using namespace nsfs;

namespace {

TargetRatio flat(Index d, double gamma) {
  TargetRatio r;
  r.dim = d;
  r.gamma = gamma;
  r.evaluate = [d](const Batch& p, Eigen::ArrayXd& lf, Batch& g) {
    lf.setZero(p.rows());
    g.setZero(p.rows(), d);
  };
  return r;
}

TargetRatio normal1(double mu, double var, double gamma) {
  return gaussian_target(Vector::Constant(1, mu), Matrix::Constant(1, 1, var), gamma);
}

Vector mixture_weights() { return Vector::Constant(2, 0.5); }
Vector mixture_means() {
  Vector m(2);
  m << -2.0, 2.0;
  return m;
}

/// Raw moments E[theta^p], p = 1..4, of the half/half mixture at +-2 with variance 1/4.
std::array<double, 4> mixture_moments() {
  std::array<double, 4> out{};
  for (int p = 1; p <= 4; ++p) {
    auto f = [p](double x) {
      const double s = 0.5;
      auto phi = [s](double z) { return std::exp(-0.5 * z * z / (s * s)) / (s * std::sqrt(2 * M_PI)); };
      return std::pow(x, p) * 0.5 * (phi(x - 2.0) + phi(x + 2.0));
    };
    out[p - 1] = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12.0, 12.0, 15, 1e-13);
  }
  return out;
}

/// |sample raw moment - exact| / SE for p = 1..4.
std::array<double, 4> moment_z(const Batch& s, const std::array<double, 4>& exact) {
  std::array<double, 4> z{};
  for (int p = 1; p <= 4; ++p) {
    const Eigen::ArrayXd v = s.col(0).array().pow(p);
    const auto m = testutil::moments(v);
    z[p - 1] = std::abs(m.mean - exact[p - 1]) / m.se_mean;
  }
  return z;
}

}  // namespace

TEST_CASE("flat ratio gives zero drift everywhere") {
  const auto r = flat(2, 0.7);
  for (double t : {0.0, 0.4, 0.99}) {
    Vector x(2);
    x << 0.3, -1.2;
    CHECK((heat_semigroup_drift_mc(r, t, x, 50, 3).drift.array() == 0.0).all());
    CHECK(semigroup_quadrature_oracle(r, t, x).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("argument validation") {
  const auto r = normal1(0.0, 1.0, 1.0);
  CHECK_THROWS_AS(heat_semigroup_drift_mc(r, 1.5, Vector::Zero(1), 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(heat_semigroup_drift_mc(r, 0.5, Vector::Zero(1), 1, 1), std::invalid_argument);
  const auto r3 = gaussian_target(Vector::Zero(3), Matrix::Identity(3, 3), 1.0);
  CHECK_THROWS_AS(semigroup_quadrature_oracle(r3, 0.5, Vector::Zero(3)), std::invalid_argument);
}

TEST_CASE("all weights underflowing is a numeric error") {
  TargetRatio r = flat(1, 1.0);
  r.evaluate = [](const Batch& p, Eigen::ArrayXd& lf, Batch& g) {
    lf.setConstant(p.rows(), -std::numeric_limits<double>::infinity());
    g.setZero(p.rows(), 1);
  };
  CHECK_THROWS_AS(heat_semigroup_drift_mc(r, 0.5, Vector::Zero(1), 20, 1), NumericError);
}

TEST_CASE("quadrature oracle: Gaussian closed form, affinity and the t -> 1 limit") {
  const double gamma = 1.0, mu = 0.7, var = 0.3;
  const auto r = normal1(mu, var, gamma);
  const GaussianFollmerDrift exact(Vector::Constant(1, mu), Matrix::Constant(1, 1, var), gamma);
  for (double t : {0.0, 0.25, 0.5, 0.8}) {
    // Fit a line through five points; the residual measures affinity.
    Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(5, -2.0, 2.0);
    Eigen::VectorXd ys(5);
    for (Index i = 0; i < 5; ++i) ys(i) = semigroup_quadrature_oracle(r, t, Vector::Constant(1, xs(i)))(0);
    Eigen::MatrixXd design(5, 2);
    design << Eigen::VectorXd::Ones(5), xs;
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(ys);
    CHECK((design * coef - ys).cwiseAbs().maxCoeff() < 1e-8);
    Batch x(1, 1);
    x(0, 0) = 1.3;
    Batch u;
    exact.evaluate(t, x, u);
    const double q = semigroup_quadrature_oracle(r, t, Vector::Constant(1, 1.3))(0);
    CHECK(std::abs(q - u(0, 0)) < 1e-8 * std::max(1.0, std::abs(u(0, 0))));
  }
  // Near t = 1 the semigroup is the identity, so the drift is gamma grad ln f.
  const double t = 1.0 - 1e-6;
  for (double xv : {-1.0, 0.2, 1.5}) {
    Batch p(1, 1);
    p(0, 0) = xv;
    Eigen::ArrayXd lf;
    Batch g;
    r.evaluate(p, lf, g);
    const double direct = gamma * g(0, 0);
    const double q = semigroup_quadrature_oracle(r, t, Vector::Constant(1, xv))(0);
    CHECK(std::abs(q - direct) < 1e-3 * std::abs(direct));
  }
}

TEST_CASE("two-dimensional quadrature matches the Gaussian closed form") {
  Vector mu(2);
  mu << 0.4, -0.3;
  Matrix cov(2, 2);
  cov << 0.6, 0.2, 0.2, 0.9;
  const double gamma = 0.8;
  const auto r = gaussian_target(mu, cov, gamma);
  const GaussianFollmerDrift exact(mu, cov, gamma);
  Batch x(1, 2);
  x << 0.5, 1.1;
  for (double t : {0.1, 0.6}) {
    Batch u;
    exact.evaluate(t, x, u);
    const Vector q = semigroup_quadrature_oracle(r, t, x.row(0).transpose());
    CHECK((q - u.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("MC drift within 3 SE of the oracle on a 5x5 grid") {
  const auto r = normal1(1.0, 0.25, 1.0);
  int misses = 0;
  std::uint64_t seed = 1;
  for (double t : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    for (double xv : {-1.5, -0.5, 0.0, 0.5, 1.5}) {
      const auto est = heat_semigroup_drift_mc(r, t, Vector::Constant(1, xv), 100000, seed++);
      const double q = semigroup_quadrature_oracle(r, t, Vector::Constant(1, xv))(0);
      const double z = std::abs(est.drift(0) - q) / est.std_error(0);
      INFO("t=" << t << " x=" << xv << " z=" << z);
      CHECK(est.std_error(0) > 0.0);
      if (z >= 3.0) ++misses;
    }
  }
  // 25 cells at 3 SE: at most one exceedance is expected by chance.
  CHECK(misses <= 1);
}

TEST_CASE("symmetric target gives zero drift at the origin") {
  const auto r = mixture_target(mixture_weights(), mixture_means(), Vector::Constant(2, 0.25), 1.0);
  for (double t : {0.1, 0.5, 0.9}) {
    const auto est = heat_semigroup_drift_mc(r, t, Vector::Zero(1), 20000, 40);
    CHECK(std::abs(est.drift(0)) < 3 * est.std_error(0));
    CHECK(std::abs(semigroup_quadrature_oracle(r, t, Vector::Zero(1))(0)) < 1e-10);
  }
}

TEST_CASE("property: shifting ln f leaves the self-normalized estimate unchanged") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const auto r = normal1(testutil::uniform(trial, -2, 2), testutil::uniform(trial + 50, 0.1, 2), 1.0);
    const double shift = testutil::uniform(trial + 100, -500, 500);
    const double t = testutil::uniform(trial + 150, 0, 0.95);
    const Vector x = Vector::Constant(1, testutil::uniform(trial + 200, -2, 2));
    const auto a = heat_semigroup_drift_mc(r, t, x, 500, trial);
    const auto b = heat_semigroup_drift_mc(shifted(r, shift), t, x, 500, trial);
    CHECK(a.drift(0) == doctest::Approx(b.drift(0)).epsilon(1e-12));
  }
}

TEST_CASE("ratio from a model is the posterior over the reference Gaussian") {
  ConjugateGaussianModel m(0.5, 2.0, 0.7, testutil::normals(6, 3));
  const double gamma = 0.9;
  const auto from_model = ratio_from_model(m, gamma);
  const auto closed = normal1(m.posterior_mean(), m.posterior_var(), gamma);
  Batch p(3, 1);
  p << -1.0, 0.2, 1.7;
  Eigen::ArrayXd la, lb;
  Batch ga, gb;
  from_model.evaluate(p, la, ga);
  closed.evaluate(p, lb, gb);
  const Eigen::ArrayXd diff = la - lb;
  CHECK((diff - diff(0)).abs().maxCoeff() < 1e-12);
  CHECK((ga - gb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SFS on a Gaussian target reproduces its moments") {
  SfsOptions o;
  o.paths = 2000;
  o.steps = 50;
  o.mc_samples = 500;
  o.seed = 5;
  const auto set = sfs_sample(normal1(1.0, 0.25, 1.0), o);
  REQUIRE(set.size() == 2000);
  const auto m = testutil::moments(set.samples.col(0).array());
  CHECK(std::abs(m.mean - 1.0) < 3 * m.se_mean);
  CHECK(std::abs(m.var - 0.25) < 3 * m.se_var);
  CHECK(set.meta.method == "sfs");
}

TEST_CASE("SFS toward the reference Gaussian is Brownian at time one") {
  const double gamma = 0.6;
  SfsOptions o;
  o.paths = 4000;
  o.steps = 20;
  o.mc_samples = 10;
  o.seed = 9;
  const auto set = sfs_sample(flat(1, gamma), o);
  const auto m = testutil::moments(set.samples.col(0).array());
  CHECK(std::abs(m.mean) < 3 * m.se_mean);
  CHECK(std::abs(m.var - gamma) < 3 * m.se_var);
}

TEST_CASE("SFS on the mixture: moments, and exact drift beats a small MC budget") {
  const auto r = mixture_target(mixture_weights(), mixture_means(), Vector::Constant(2, 0.25), 1.0);
  const auto exact = mixture_moments();
  CHECK(exact[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(exact[1] == doctest::Approx(4.25));

  SfsOptions o;
  o.paths = 2000;
  o.steps = 50;
  o.mc_samples = 1000;
  o.seed = 21;
  const auto mc = sfs_sample(r, o);
  const auto z = moment_z(mc.samples, exact);
  for (int p = 0; p < 4; ++p) {
    INFO("moment " << p + 1 << " z=" << z[p]);
    CHECK(z[p] < 3.0);
  }

  // Same Brownian seeds with the quadrature drift versus M = 100.
  const QuadratureDrift oracle(r, 128);
  auto exact_drift = [&](Index, double t, const Batch& x, Batch& out) { oracle.evaluate(t, x, out); };
  const auto tr = em_integrate(exact_drift, 1, 2000, 50, 1.0, 21, RecordFlags{false, false, false});
  SfsOptions small = o;
  small.mc_samples = 100;
  small.seed = 21;
  const auto cheap = sfs_sample(r, small);
  auto moment_error = [&](const Batch& s) {
    double e = 0.0;
    for (int p = 1; p <= 4; ++p) {
      const double m = s.col(0).array().pow(p).mean();
      e += std::abs(m - exact[p - 1]) / std::max(1.0, std::abs(exact[p - 1]));
    }
    return e;
  };
  INFO("exact " << moment_error(tr.terminal) << " mc100 " << moment_error(cheap.samples));
  CHECK(moment_error(tr.terminal) < moment_error(cheap.samples));
}

TEST_CASE("parallel_for runs every index once") {
  std::vector<std::atomic<int>> hits(37);
  parallel_for(37, 4, [&](Index i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
}
