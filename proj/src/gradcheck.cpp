#include "nsfs/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace nsfs {

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Vector& analytic, const Vector& numeric) {
  if (analytic.size() != numeric.size()) return std::numeric_limits<double>::infinity();
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(analytic.lpNorm<Eigen::Infinity>(), numeric.lpNorm<Eigen::Infinity>());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

namespace {

GradComparison compare(std::string what, Vector analytic, Vector numeric) {
  GradComparison c;
  c.what = std::move(what);
  c.rel_error = relative_error(analytic, numeric);
  c.analytic = std::move(analytic);
  c.numeric = std::move(numeric);
  return c;
}

}  // namespace

std::vector<GradComparison> check_model_gradients(const BayesModel& model, const Vector& theta,
                                                  double h) {
  std::vector<GradComparison> out;
  const Index d = model.dim();
  {
    Vector g = Vector::Zero(d);
    model.log_prior(theta, &g);
    out.push_back(compare("log_prior", g, central_difference(
                                              [&](const Vector& x) { return model.log_prior(x, nullptr); },
                                              theta, h)));
  }
  const Dataset& data = model.data();
  for (Index i = 0; i < data.size(); ++i) {
    Vector g = Vector::Zero(d);
    model.log_lik(theta, data, i, &g);
    out.push_back(compare("log_lik[" + std::to_string(i) + "]", g,
                          central_difference(
                              [&](const Vector& x) { return model.log_lik(x, data, i, nullptr); },
                              theta, h)));
  }
  std::vector<Index> rows;
  for (Index i = 0; i < data.size(); i += 2) rows.push_back(i);
  const double scale = static_cast<double>(data.size()) / static_cast<double>(std::max<std::size_t>(1, rows.size()));
  Vector g = Vector::Zero(d);
  model.log_lik_sum(theta, data, rows, scale, &g);
  out.push_back(compare("log_lik_sum", g,
                        central_difference(
                            [&](const Vector& x) { return model.log_lik_sum(x, data, rows, scale, nullptr); },
                            theta, h)));
  return out;
}

std::vector<GradComparison> check_drift_gradients(ControlledDrift& drift, double t,
                                                  const Batch& states, const Batch& weights,
                                                  double h) {
  std::unique_ptr<DriftTape> tape;
  drift.forward(t, states, &tape);
  Batch grad_states;
  Vector grad_params = Vector::Zero(drift.param_count());
  drift.backward(*tape, weights, grad_states, &grad_params);

  const Vector saved = drift.params();
  auto loss_params = [&](const Vector& p) {
    drift.params() = p;
    const double v = (drift.forward(t, states, nullptr).array() * weights.array()).sum();
    drift.params() = saved;
    return v;
  };
  auto loss_states = [&](const Vector& flat) {
    const Batch x = Eigen::Map<const Batch>(flat.data(), states.rows(), states.cols());
    return (drift.forward(t, x, nullptr).array() * weights.array()).sum();
  };
  const Vector flat_states = Eigen::Map<const Vector>(states.data(), states.size());
  const Vector flat_grad_states = Eigen::Map<const Vector>(grad_states.data(), grad_states.size());
  return {compare("drift weights", grad_params, central_difference(loss_params, saved, h)),
          compare("drift states", flat_grad_states, central_difference(loss_states, flat_states, h))};
}

GradComparison check_objective_gradient(ControlledDrift& drift, const BayesModel& model,
                                        const ObjectiveOptions& options, double h) {
  ObjectiveOptions o = options;
  o.estimator = Estimator::relative_entropy;
  const Vector saved = drift.params();
  const Vector g = objective_full(drift, model, o).gradient;
  auto value = [&](const Vector& p) {
    drift.params() = p;
    const double v = objective_full(drift, model, o).value;
    drift.params() = saved;
    return v;
  };
  return compare("objective weights", g, central_difference(value, saved, h));
}

}  // namespace nsfs
