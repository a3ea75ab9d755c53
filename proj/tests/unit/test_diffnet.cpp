#include "doctest.h"

#include "nsfs/adam.hpp"
#include "nsfs/drift_net.hpp"
#include "nsfs/gradcheck.hpp"
#include "nsfs/sde.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace nsfs;
using testutil::normal_batch;
using testutil::normals;

namespace {

double softplus(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST_CASE("fresh net outputs exactly zero in every mode") {
  DriftNet net(DriftNetShape{3, 3, 20, 4, true}, 5);
  const Batch x = normal_batch(7, 3, 1, 3.0);
  for (double t : {0.0, 0.4, 1.0}) {
    CHECK(net.forward(t, x, nullptr).cwiseAbs().maxCoeff() == 0.0);
    net.set_mode(NetMode::eval);
    CHECK(net.forward(t, x, nullptr).cwiseAbs().maxCoeff() == 0.0);
    net.set_mode(NetMode::train);
  }
}

TEST_CASE("hand-evaluated two-unit network") {
  DriftNet net(DriftNetShape{1, 1, 2, 1, false}, 3);
  net.weight(0).setZero();
  net.bias(0).setZero();
  net.weight(1) << 1.0, 2.0;
  net.bias(1) << 0.5;
  Batch x(1, 1);
  x << 0.7;
  // softplus(0) = ln 2 on both units.
  CHECK(net.forward(0.3, x, nullptr)(0, 0) == doctest::Approx(3.0 * std::log(2.0) + 0.5).epsilon(1e-15));

  // Identity-like first layer on the (theta, t) input.
  net.weight(0) << 1.0, 0.0, 0.0, 1.0;
  x << 0.3;
  const double expected = softplus(0.3) + 2.0 * softplus(0.5) + 0.5;
  CHECK(net.forward(0.5, x, nullptr)(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("eval mode is deterministic and leaves running statistics alone") {
  DriftNet net(DriftNetShape{2, 2, 8, 3, true}, 9);
  net.params() = normals(net.param_count(), 2, 0.5);
  net.forward(0.2, normal_batch(16, 2, 3), nullptr);  // train step moves the running stats
  net.set_mode(NetMode::eval);
  std::vector<Vector> mean_before, var_before;
  for (Index l = 0; l < net.layer_count(); ++l) {
    mean_before.push_back(net.running_mean(l));
    var_before.push_back(net.running_var(l));
  }
  const Batch x = normal_batch(5, 2, 4);
  const Batch a = net.forward(0.6, x, nullptr);
  const Batch b = net.forward(0.6, x, nullptr);
  CHECK((a.array() == b.array()).all());
  net.sample_forward(0.6, x, true);
  net.sample_forward(0.6, x, false);
  for (Index l = 0; l < net.layer_count(); ++l) {
    CHECK((net.running_mean(l).array() == mean_before[l].array()).all());
    CHECK((net.running_var(l).array() == var_before[l].array()).all());
    CHECK((net.running_var(l).array() >= 0.0).all());
  }
}

TEST_CASE("train mode updates running statistics with momentum 0.1") {
  DriftNet net(DriftNetShape{1, 1, 4, 1, true}, 11);
  Batch x(4, 1);
  x << -1.0, 0.0, 2.0, 3.0;
  const double t = 0.25;
  net.forward(t, x, nullptr);
  // Pre-normalization activations of layer 0 are W (x, t) + b.
  Batch in(4, 2);
  in.col(0) = x.col(0);
  in.col(1).setConstant(t);
  const Batch pre = (in * net.weight(0).transpose()).rowwise() + net.bias(0).transpose();
  const Vector mean = pre.colwise().mean().transpose();
  const Vector var = ((pre.rowwise() - mean.transpose()).array().square().colwise().sum() / 3.0).transpose();
  for (Index j = 0; j < 4; ++j) {
    CHECK(net.running_mean(0)(j) == doctest::Approx(0.1 * mean(j)).epsilon(1e-12));
    CHECK(net.running_var(0)(j) == doctest::Approx(0.9 + 0.1 * var(j)).epsilon(1e-12));
  }
}

TEST_CASE("forward argument validation") {
  DriftNet net(DriftNetShape{2, 2, 4, 2, true}, 1);
  CHECK_THROWS_AS(net.forward(0.1, Batch::Zero(3, 3), nullptr), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(0.1, Batch::Zero(1, 2), nullptr), std::invalid_argument);
  net.set_mode(NetMode::eval);
  CHECK_NOTHROW(net.forward(0.1, Batch::Zero(1, 2), nullptr));
}

TEST_CASE("backward without a recorded tape is a state error") {
  DriftNet net(DriftNetShape{1, 1, 4, 1, false}, 1);
  DriftTape foreign;
  Batch g;
  CHECK_THROWS_AS(net.backward(foreign, Batch::Zero(2, 1), g, nullptr), StateError);
}

TEST_CASE("half squared norm loss matches central differences on a toy net") {
  DriftNet net(DriftNetShape{1, 1, 1, 1, false}, 2);
  net.params() = normals(net.param_count(), 77, 0.8);
  Batch x(3, 1);
  x << 0.4, -1.2, 0.9;
  std::unique_ptr<DriftTape> tape;
  const Batch u = net.forward(0.3, x, &tape);
  Batch gx;
  Vector gp = Vector::Zero(net.param_count());
  net.backward(*tape, u, gx, &gp);  // d(0.5 |u|^2)/du = u
  const Vector saved = net.params();
  const Vector fd = central_difference(
      [&](const Vector& p) {
        net.params() = p;
        const double v = 0.5 * net.forward(0.3, x, nullptr).squaredNorm();
        net.params() = saved;
        return v;
      },
      saved);
  CHECK(relative_error(gp, fd) < 1e-6);
}

TEST_CASE("zero final layer blocks every earlier gradient") {
  DriftNet net(DriftNetShape{2, 2, 6, 3, true}, 4);
  const Batch x = normal_batch(5, 2, 8);
  std::unique_ptr<DriftTape> tape;
  const Batch u = net.forward(0.5, x, &tape);
  Batch gx;
  Vector gp = Vector::Zero(net.param_count());
  net.backward(*tape, 2.0 * u, gx, &gp);
  const Index final_offset = net.param_count() - net.weight(net.layer_count()).size() -
                             net.bias(net.layer_count()).size();
  CHECK(gp.head(final_offset).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gx.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("duplicated rows receive equal state gradients") {
  DriftNet net(DriftNetShape{2, 2, 6, 2, false}, 6);
  net.params() = normals(net.param_count(), 10, 0.5);
  Batch x(2, 2);
  x << 0.3, -0.8, 0.3, -0.8;
  std::unique_ptr<DriftTape> tape;
  net.forward(0.7, x, &tape);
  Batch up(2, 2);
  up << 1.0, -0.5, 1.0, -0.5;
  Batch gx;
  Vector gp = Vector::Zero(net.param_count());
  net.backward(*tape, up, gx, &gp);
  CHECK((gx.row(0).array() == gx.row(1).array()).all());
}

TEST_CASE("property: random small nets match central differences") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const Index d = testutil::uniform_int(trial * 7 + 1, 1, 4);
    const Index w = testutil::uniform_int(trial * 7 + 2, 1, 8);
    const Index layers = testutil::uniform_int(trial * 7 + 3, 1, 4);
    const bool bn = trial % 2 == 0;
    // Two-row batch norm maps inputs to nearly +-1, so the state gradient all but
    // vanishes and a relative error against differences means nothing.
    const Index rows = testutil::uniform_int(trial * 7 + 4, 3, 6);
    const double t = testutil::uniform(trial * 7 + 5, 0.0, 1.0);
    DriftNet net(DriftNetShape{d, d, w, layers, bn}, trial);
    net.params() = normals(net.param_count(), 1000 + trial, 0.6);
    const auto cs = check_drift_gradients(net, t, normal_batch(rows, d, 2000 + trial),
                                          normal_batch(rows, d, 3000 + trial));
    for (const auto& c : cs) {
      INFO("trial " << trial << " " << c.what << " d=" << d << " W=" << w << " bn=" << bn);
      CHECK(c.rel_error < 1e-4);
    }
  }
}

TEST_CASE("zero-init drift simulates sqrt(gamma) Brownian motion") {
  const double gamma = 0.5;
  DriftNet net(DriftNetShape{1, 1, 20, 4, true}, 21);
  auto drift = [&](Index, double t, const Batch& x, Batch& out) { out = net.forward(t, x, nullptr); };
  const auto traj = em_integrate(drift, 1, 10000, 20, gamma, 3, RecordFlags{false, false, false});
  const auto m = testutil::moments(traj.terminal.col(0).array());
  CHECK(std::abs(m.mean) < 3 * m.se_mean);
  CHECK(std::abs(m.var - gamma) < 3 * m.se_var);
}

TEST_CASE("adam first step by hand") {
  AdamState s = AdamState::for_weights(2, 1e-4);
  Vector w(2), g(2);
  w << 0.5, -0.25;
  g << 3.0, -0.02;
  adam_step(s, w, g);
  CHECK(s.step_count == 1);
  // Bias correction makes m_hat = g, v_hat = g^2.
  CHECK(w(0) == doctest::Approx(0.5 - 1e-4 * 3.0 / (3.0 + 1e-8)).epsilon(1e-15));
  CHECK(w(1) == doctest::Approx(-0.25 + 1e-4 * 0.02 / (0.02 + 1e-8)).epsilon(1e-15));
  CHECK((s.second_moment.array() >= 0.0).all());

  // Second step by hand.
  Vector g2(2);
  g2 << -1.0, 0.5;
  const Vector m = 0.9 * (0.1 * g) + 0.1 * g2;
  const Vector v = 0.999 * (0.001 * g.cwiseAbs2()) + 0.001 * g2.cwiseAbs2();
  const Vector mh = m / (1 - 0.81);
  const Vector vh = v / (1 - 0.999 * 0.999);
  const Vector expected = w.array() - 1e-4 * mh.array() / (vh.array().sqrt() + 1e-8);
  adam_step(s, w, g2);
  CHECK((w - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adam rejects non-finite gradients naming the index and is deterministic") {
  AdamState s = AdamState::for_weights(3);
  Vector w = Vector::Ones(3);
  Vector g(3);
  g << 1.0, std::nan(""), 2.0;
  try {
    adam_step(s, w, g);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
  CHECK(s.step_count == 0);
  CHECK_THROWS_AS(adam_step(s, w, Vector::Ones(2)), std::invalid_argument);

  AdamState a = AdamState::for_weights(3), b = AdamState::for_weights(3);
  Vector wa = Vector::Ones(3), wb = Vector::Ones(3);
  const Vector gg = normals(3, 5);
  adam_step(a, wa, gg);
  adam_step(b, wb, gg);
  CHECK((wa.array() == wb.array()).all());
}

TEST_CASE("checkpoint round trip is bit exact") {
  DriftNet net(DriftNetShape{3, 3, 5, 2, true}, 13);
  net.params() = normals(net.param_count(), 14);
  net.forward(0.1, normal_batch(6, 3, 15), nullptr);
  const auto path = std::filesystem::temp_directory_path() / "nsfs_ckpt_test.bin";
  net.save(path);
  DriftNet back = DriftNet::load(path);
  CHECK(back.shape().input_dim == 3);
  CHECK(back.shape().width == 5);
  CHECK(back.shape().hidden_layers == 2);
  CHECK((back.params().array() == net.params().array()).all());
  for (Index l = 0; l < 2; ++l) {
    CHECK((back.running_mean(l).array() == net.running_mean(l).array()).all());
    CHECK((back.running_var(l).array() == net.running_var(l).array()).all());
  }
  {
    std::ofstream junk(path, std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(DriftNet::load(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(DriftNet::load(path), IoError);
}
