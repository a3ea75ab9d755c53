#include "doctest.h"

#include "nsfs/sde.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace nsfs;

namespace {

void zero_drift(Index, double, const Batch& x, Batch& out) { out.setZero(x.rows(), x.cols()); }

void smooth_drift(Index, double t, const Batch& x, Batch& out) {
  out = x.array().sin() - 0.5 * t * x.array();
}

/// Entrywise sample covariance of the rows and its Monte Carlo standard error.
void covariance_with_se(const Batch& x, Matrix& cov, Matrix& se) {
  const Index n = x.rows();
  const Index d = x.cols();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Batch c = x.rowwise() - mu;
  cov.resize(d, d);
  se.resize(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      const Eigen::ArrayXd prod = c.col(i).array() * c.col(j).array();
      const auto m = testutil::moments(prod);
      cov(i, j) = prod.sum() / static_cast<double>(n - 1);
      se(i, j) = m.se_mean;
    }
  }
}

Matrix coupled_matrix() {
  // A_ij = delta_ij + i * delta_1j with 1-based i.
  Matrix a = Matrix::Identity(3, 3);
  for (Index i = 0; i < 3; ++i) a(i, 0) += static_cast<double>(i + 1);
  return a;
}

}  // namespace

TEST_CASE("zero drift, one step, unit gamma gives the noise itself") {
  const auto tr = em_integrate(zero_drift, 2, 5, 1, 1.0, 17);
  CHECK((tr.terminal.array() == tr.noises[0].array()).all());
  CHECK((tr.states[0].array() == 0.0).all());
}

TEST_CASE("constant drift without noise is deterministic Euler") {
  for (Index k : {1, 3, 20, 100}) {
    auto c = [](Index, double, const Batch& x, Batch& out) {
      out.resize(x.rows(), 2);
      out.col(0).setConstant(1.5);
      out.col(1).setConstant(-0.25);
    };
    const auto tr = em_integrate(c, 2, 3, k, 0.0, 1);
    CHECK(tr.terminal(2, 0) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(tr.terminal(1, 1) == doctest::Approx(-0.25).epsilon(1e-14));
  }
}

TEST_CASE("replay identity and grid invariants") {
  const auto tr = em_integrate(smooth_drift, 3, 7, 13, 0.8, 5);
  CHECK(std::abs(static_cast<double>(tr.steps) * tr.dt - 1.0) <= 2.3e-16);
  CHECK((tr.states[0].array() == 0.0).all());
  const double sg = std::sqrt(tr.gamma * tr.dt);
  for (Index j = 0; j < tr.steps; ++j) {
    const Batch next = tr.states[j] + tr.drifts[j] * tr.dt + sg * tr.noises[j];
    CHECK((next.array() == tr.states[j + 1].array()).all());
  }
  const auto again = replay(tr, smooth_drift);
  CHECK((again.terminal.array() == tr.terminal.array()).all());
}

TEST_CASE("replay under zero drift sums the scaled noise") {
  const auto tr = em_integrate(smooth_drift, 2, 4, 10, 1.3, 8);
  const auto z = replay(tr, zero_drift);
  Batch sum = Batch::Zero(4, 2);
  for (const auto& xi : tr.noises) sum += std::sqrt(1.3 * tr.dt) * xi;
  CHECK((z.terminal - sum).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("replay without retained noise is a state error") {
  const auto tr = em_integrate(zero_drift, 1, 2, 4, 1.0, 1, RecordFlags{true, false, false});
  CHECK_THROWS_AS(replay(tr, zero_drift), StateError);
}

TEST_CASE("replay perturbation scales linearly") {
  const auto tr = em_integrate(smooth_drift, 2, 16, 32, 1.0, 9);
  auto shifted = [](double delta) {
    return [delta](Index s, double t, const Batch& x, Batch& out) {
      smooth_drift(s, t, x, out);
      out.array() += delta;
    };
  };
  const double d6 = (replay(tr, shifted(1e-6)).terminal - tr.terminal).cwiseAbs().maxCoeff();
  const double d7 = (replay(tr, shifted(1e-7)).terminal - tr.terminal).cwiseAbs().maxCoeff();
  CHECK(d6 / d7 == doctest::Approx(10.0).epsilon(0.01));
}

TEST_CASE("seed determinism and errors") {
  const auto a = em_integrate(smooth_drift, 2, 6, 9, 0.5, 123);
  const auto b = em_integrate(smooth_drift, 2, 6, 9, 0.5, 123);
  CHECK((a.terminal.array() == b.terminal.array()).all());
  const auto c = em_integrate(smooth_drift, 2, 6, 9, 0.5, 124);
  CHECK((a.terminal.array() != c.terminal.array()).any());
  // Path s draws do not depend on how many paths run alongside it.
  const auto wide = em_integrate(smooth_drift, 2, 12, 9, 0.5, 123);
  CHECK((wide.terminal.topRows(6).array() == a.terminal.array()).all());

  CHECK_THROWS_AS(em_integrate(zero_drift, 1, 2, 0, 1.0, 1), std::invalid_argument);
  auto bad = [](Index, double, const Batch& x, Batch& out) {
    out.setZero(x.rows(), x.cols());
    out(1, 0) = std::nan("");
  };
  try {
    em_integrate(bad, 1, 3, 4, 1.0, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("path 1") != std::string::npos);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("Brownian marginals under zero drift at every grid time") {
  const double gamma = 0.7;
  const auto tr = em_integrate(zero_drift, 1, 10000, 8, gamma, 31, RecordFlags{true, false, false});
  for (Index j = 1; j <= 8; ++j) {
    const auto m = testutil::moments(tr.states[j].col(0).array());
    CHECK(std::abs(m.var - gamma * tr.time(j)) < 3 * m.se_var);
    CHECK(std::abs(m.mean) < 3 * m.se_mean);
  }
}

TEST_CASE("linear covariance oracle closed forms") {
  const Matrix brownian = linear_sde_covariance(Matrix::Zero(2, 2), 1.0, 0.6);
  CHECK((brownian - 0.6 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-13);
  const double lambda = -0.8, t = 0.9;
  const Matrix ou = linear_sde_covariance(lambda * Matrix::Identity(3, 3), 1.0, t);
  const double expected = (std::exp(2 * lambda * t) - 1.0) / (2 * lambda);
  CHECK((ou - expected * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-13);
  const Matrix dense = linear_sde_covariance(coupled_matrix(), 1.0, 1.0);
  CHECK((dense.array().abs() > 1e-3).all());
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("discrete Euler covariance converges to the continuous oracle") {
  const Matrix a = coupled_matrix();
  const Matrix exact = linear_sde_covariance(a, 1.0, 1.0);
  double prev = 1e300;
  for (Index k : {64, 256, 1024, 4096}) {
    const double err = (euler_linear_covariance(a, 1.0, 1.0, k) - exact).cwiseAbs().maxCoeff() /
                       exact.cwiseAbs().maxCoeff();
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 2e-3);
}

TEST_CASE("empirical covariance of the linear SDE matches the discrete recursion") {
  const Matrix a = coupled_matrix();
  auto lin = [&](Index, double, const Batch& x, Batch& out) { out = x * a.transpose(); };
  const Index k = 64;
  const auto tr = em_integrate(lin, 3, 20000, k, 1.0, 77, RecordFlags{false, false, false});
  Matrix cov, se;
  covariance_with_se(tr.terminal, cov, se);
  const Matrix oracle = euler_linear_covariance(a, 1.0, 1.0, k);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      INFO("entry " << i << "," << j);
      CHECK(std::abs(cov(i, j) - oracle(i, j)) < 3.0 * se(i, j));
    }
  }
}

TEST_CASE("strong error between k and 2k decays at least like sqrt(dt)") {
  const Index paths = 400;
  const Index finest = 256;
  const auto fine = em_integrate(zero_drift, 1, paths, finest, 1.0, 91);
  std::vector<std::vector<Batch>> noise{fine.noises};
  while (static_cast<Index>(noise.back().size()) > 16) noise.push_back(coarsen_noise(noise.back()));
  // noise[m] has finest / 2^m steps.
  auto solve = [&](const std::vector<Batch>& xi) { return em_integrate_with_noise(smooth_drift, xi, 1.0); };
  std::vector<double> errors;
  for (std::size_t m = noise.size() - 1; m >= 1; --m) {
    // k = steps of noise[m], compare with 2k on the common grid.
    const auto coarse = solve(noise[m]);
    const auto finer = solve(noise[m - 1]);
    Eigen::ArrayXd worst = Eigen::ArrayXd::Zero(paths);
    for (Index j = 0; j <= coarse.steps; ++j) {
      worst = worst.max((coarse.states[j] - finer.states[2 * j]).col(0).array().abs());
    }
    errors.push_back(worst.mean());
  }
  REQUIRE(errors.size() == 4);  // k = 16, 32, 64, 128
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    const double ratio = errors[i] / errors[i + 1];
    INFO("ratio " << ratio);
    // sqrt(dt) scaling predicts sqrt(2); additive noise makes the scheme order one,
    // which still sits inside the factor-2 band.
    CHECK(ratio > std::sqrt(2.0) / 2.0);
    CHECK(ratio < 2.0 * std::sqrt(2.0));
  }
}

TEST_CASE("trajectory CSV dump with sidecar") {
  const auto tr = em_integrate(smooth_drift, 2, 2, 3, 1.0, 4);
  const auto path = std::filesystem::temp_directory_path() / "nsfs_traj_test.csv";
  write_trajectory_csv(tr, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "path,step,t,dim,value");
  Index rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * 4 * 2);
  auto side = path;
  side += ".json";
  CHECK(std::filesystem::exists(side));
  std::filesystem::remove(path);
  std::filesystem::remove(side);
}
