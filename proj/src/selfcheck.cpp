#include "nsfs/selfcheck.hpp"

#include "nsfs/adam.hpp"
#include "nsfs/drift_net.hpp"
#include "nsfs/follmer.hpp"
#include "nsfs/gradcheck.hpp"
#include "nsfs/models.hpp"
#include "nsfs/objective.hpp"
#include "nsfs/rng.hpp"
#include "nsfs/sde.hpp"

#include <cmath>
#include <sstream>

namespace nsfs {

namespace {

Vector normals(Index n, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed, Stream::dataset, 99);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Batch normal_batch(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  const Vector v = normals(rows * cols, seed, scale);
  return Eigen::Map<const Batch>(v.data(), rows, cols);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult gradient_result(const std::string& name, const std::vector<GradComparison>& cs) {
  double worst = 0.0;
  std::string where;
  for (const auto& c : cs) {
    if (!(c.rel_error <= worst)) {
      worst = c.rel_error;
      where = c.what;
    }
  }
  return {name, worst < 1e-4, "max rel error " + num(worst) + (where.empty() ? "" : " (" + where + ")")};
}

CheckResult em_pure_noise() {
  const auto zero = [](Index, double, const Batch& x, Batch& out) { out.setZero(x.rows(), x.cols()); };
  const auto traj = em_integrate(zero, 3, 4, 1, 1.0, 11);
  const double err = (traj.terminal - traj.noises.front()).cwiseAbs().maxCoeff();
  return {"em single pure-noise step", err == 0.0, "max |Theta_1 - xi| = " + num(err)};
}

CheckResult em_replay() {
  const auto lin = [](Index, double t, const Batch& x, Batch& out) { out = (1.0 + t) * x.array().sin(); };
  const auto traj = em_integrate(lin, 2, 8, 16, 0.7, 5);
  bool exact = true;
  const double sg = std::sqrt(traj.gamma * traj.dt);
  for (Index j = 0; j < traj.steps; ++j) {
    const Batch next = traj.states[j] + traj.drifts[j] * traj.dt + sg * traj.noises[j];
    exact = exact && (next.array() == traj.states[j + 1].array()).all();
  }
  return {"em replay identity", exact, exact ? "bit-exact" : "mismatch"};
}

CheckResult quadrature_vs_gaussian() {
  double worst = 0.0;
  for (Index d : {1, 2}) {
    Vector mean = normals(d, 3 + d);
    Matrix a = normal_batch(d, d, 7 + d, 0.5);
    Matrix cov = a * a.transpose() + Matrix::Identity(d, d) * 0.4;
    const double gamma = 0.8;
    const GaussianFollmerDrift exact(mean, cov, gamma);
    const TargetRatio ratio = gaussian_target(mean, cov, gamma);
    for (double t : {0.0, 0.35, 0.9}) {
      const Vector x = normals(d, 20 + d, 0.7);
      Batch xs = x.transpose();
      Batch u;
      exact.evaluate(t, xs, u);
      const Vector q = semigroup_quadrature_oracle(ratio, t, x, 120);
      worst = std::max(worst, (q - u.row(0).transpose()).cwiseAbs().maxCoeff());
    }
  }
  return {"quadrature drift vs Gaussian closed form", worst < 1e-8, "max abs error " + num(worst)};
}

CheckResult drift_net_gradients() {
  std::vector<GradComparison> all;
  for (bool bn : {true, false}) {
    DriftNet net(DriftNetShape{3, 3, 8, 2, bn}, 17);
    net.params() = normals(net.param_count(), 23, 0.4);
    net.set_mode(NetMode::train);
    const Batch x = normal_batch(6, 3, 29);
    const Batch w = normal_batch(6, 3, 31);
    auto cs = check_drift_gradients(net, 0.3, x, w);
    all.insert(all.end(), cs.begin(), cs.end());
  }
  return gradient_result("drift net gradients vs central differences", all);
}

CheckResult model_gradients() {
  std::vector<GradComparison> all;
  auto add = [&](const BayesModel& m, const Vector& theta) {
    auto cs = check_model_gradients(m, theta);
    all.insert(all.end(), cs.begin(), cs.end());
  };
  add(ConjugateGaussianModel(0.3, 1.5, 0.5, normals(5, 41)), normals(1, 43));

  Dataset reg;
  reg.features = normal_batch(6, 2, 47);
  reg.targets = normals(6, 53);
  BnnRegressionModel bnn({2, 5, 4, 1}, 0.7, 0.3, reg);
  add(bnn, normals(bnn.dim(), 59, 0.7));

  Dataset cls;
  cls.features = normal_batch(7, 3, 61);
  cls.targets = normals(7, 67).unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
  LogisticRegressionModel logistic(1.3, cls);
  add(logistic, normals(logistic.dim(), 71, 0.8));

  IcaModel ica(3, make_ica_synthetic(3, 6, 73), 1.0, true);
  add(ica, Vector(Eigen::Map<const Vector>(Matrix(Matrix::Identity(3, 3) + normal_batch(3, 3, 79, 0.2)).data(), 9)));

  HierarchicalGaussianModel hier(0.8, normals(4, 83));
  add(hier, normals(5, 89));
  return gradient_result("model log-density gradients vs central differences", all);
}

CheckResult objective_gradient() {
  ConjugateGaussianModel m(0.0, 2.0, 0.5, normals(4, 97));
  DriftNet net(DriftNetShape{1, 1, 6, 2, true}, 101);
  net.params() = normals(net.param_count(), 103, 0.3);
  ObjectiveOptions o;
  o.paths = 8;
  o.steps = 5;
  o.gamma = 0.9;
  o.seed = 107;
  return gradient_result("objective gradient vs central differences", {check_objective_gradient(net, m, o)});
}

CheckResult reduction() {
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const double gamma = 0.5 + 0.3 * rep;
    ConjugateGaussianModel m(0.0, gamma, 0.7, normals(6, 200 + rep));
    DriftNet net(DriftNetShape{1, 1, 6, 2, true}, 300 + rep);
    net.params() = normals(net.param_count(), 400 + rep, 0.3);
    ObjectiveOptions o;
    o.paths = 6;
    o.steps = 7;
    o.gamma = gamma;
    o.seed = 500 + rep;
    o.keep_per_path = true;
    const auto full = objective_full(net, m, o);
    const auto red = objective_reduced(net, m, o);
    worst = std::max(worst, (full.per_path - red.per_path).cwiseAbs().maxCoeff());
  }
  return {"Gaussian-prior reduction pathwise", worst < 1e-10, "max abs gap " + num(worst)};
}

CheckResult minibatch_unbiased() {
  const Index n = 5;
  ConjugateGaussianModel m(0.2, 1.1, 0.6, normals(n, 601));
  DriftNet net(DriftNetShape{1, 1, 6, 2, false}, 603);
  net.params() = normals(net.param_count(), 607, 0.3);
  ObjectiveOptions o;
  o.paths = 4;
  o.steps = 4;
  o.gamma = 1.0;
  o.seed = 611;
  const Vector full = objective_full(net, m, o).gradient;
  double worst = 0.0;
  for (Index b = 1; b <= n; ++b) {
    Vector sum = Vector::Zero(full.size());
    Index count = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<Index>(__builtin_popcount(mask)) != b) continue;
      std::vector<Index> rows;
      for (Index i = 0; i < n; ++i) {
        if (mask & (1u << i)) rows.push_back(i);
      }
      sum += objective_minibatch(net, m, o, rows).gradient;
      ++count;
    }
    worst = std::max(worst, (sum / static_cast<double>(count) - full).cwiseAbs().maxCoeff() /
                                std::max(1.0, full.cwiseAbs().maxCoeff()));
  }
  return {"minibatch gradient unbiased over all subsets", worst < 1e-10, "max gap " + num(worst)};
}

CheckResult adam_hand() {
  AdamState s = AdamState::for_weights(2, 0.1);
  Vector w(2);
  w << 1.0, -2.0;
  Vector g(2);
  g << 0.5, -4.0;
  adam_step(s, w, g);
  // After one step m_hat = g and v_hat = g^2, so w -= alpha * g / (|g| + eps).
  const double e0 = std::abs(w(0) - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8)));
  const double e1 = std::abs(w(1) - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)));
  const double err = std::max(e0, e1);
  return {"adam first step by hand", err < 1e-14, "abs error " + num(err)};
}

CheckResult zero_init_brownian() {
  const double gamma = 1.0;
  DriftNet net(DriftNetShape{2, 2, 20, 4, true}, 701);
  const Index paths = 10000;
  auto drift = [&](Index, double t, const Batch& x, Batch& out) { out = net.sample_forward(t, x, true); };
  const auto traj = em_integrate(drift, 2, paths, 10, gamma, 703, RecordFlags{false, false, false});
  bool ok = true;
  double worst = 0.0;
  for (Index j = 0; j < 2; ++j) {
    const auto col = traj.terminal.col(j).array();
    const double mu = col.mean();
    const double var = (col - mu).square().sum() / static_cast<double>(paths - 1);
    const double se_mean = std::sqrt(var / static_cast<double>(paths));
    const double m4 = (col - mu).pow(4).mean();
    const double se_var = std::sqrt((m4 - var * var) / static_cast<double>(paths));
    worst = std::max({worst, std::abs(mu) / se_mean, std::abs(var - gamma) / se_var});
    ok = ok && std::abs(mu) < 3 * se_mean && std::abs(var - gamma) < 3 * se_var;
  }
  return {"zero-init drift gives Brownian terminal law", ok, "max z " + num(worst)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck() {
  using Check = CheckResult (*)();
  const Check checks[] = {em_pure_noise,       em_replay,       quadrature_vs_gaussian,
                          drift_net_gradients, model_gradients, objective_gradient,
                          reduction,           minibatch_unbiased, adam_hand,
                          zero_init_brownian};
  std::vector<CheckResult> out;
  for (auto check : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({"(check threw)", false, e.what()});
    }
  }
  return out;
}

bool print_selfcheck(const std::vector<CheckResult>& results, std::ostream& out) {
  bool all = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    all = all && r.passed;
  }
  return all;
}

}  // namespace nsfs
