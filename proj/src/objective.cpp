#include "nsfs/objective.hpp"

#include "nsfs/sde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nsfs {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kLogDensityFloor = -1e10;

enum class Terminal {
  full,             // ln N(x | 0, gamma I) - ln p(x) - scale * ln p(X_batch | x)
  likelihood_only,  // - scale * ln p(X_batch | x)
};

struct Setup {
  Terminal terminal = Terminal::full;
  std::span<const Index> rows;
  double scale = 1.0;
  const DriftField* reference = nullptr;
};

std::string describe_row(const Batch& x, Index s) {
  std::ostringstream os;
  os.precision(17);
  os << "[";
  for (Index i = 0; i < std::min<Index>(x.cols(), 8); ++i) os << (i ? ", " : "") << x(s, i);
  if (x.cols() > 8) os << ", ...";
  os << "]";
  return os.str();
}

void validate(const ControlledDrift& drift, const BayesModel& model, const ObjectiveOptions& o) {
  if (o.paths < 1) throw std::invalid_argument("objective: path count S must be >= 1");
  if (o.steps < 1) throw std::invalid_argument("objective: step count k must be >= 1");
  if (!(o.gamma > 0.0) || !std::isfinite(o.gamma)) {
    throw std::invalid_argument("objective: gamma must be positive");
  }
  if (drift.state_dim() != model.dim()) {
    throw std::invalid_argument("objective: drift dimension differs from model dimension");
  }
}

ObjectiveEstimate evaluate(ControlledDrift& drift, const BayesModel& model,
                           const ObjectiveOptions& o, const Setup& setup) {
  validate(drift, model, o);
  const Index S = o.paths;
  const Index k = o.steps;
  const Index d = model.dim();
  const double dt = 1.0 / static_cast<double>(k);
  const double gamma = o.gamma;
  const double noise_scale = std::sqrt(gamma * dt);
  const double ito_scale = std::sqrt(dt) / std::sqrt(gamma);
  const double inv_s = 1.0 / static_cast<double>(S);
  if (setup.reference && setup.reference->state_dim() != d) {
    throw std::invalid_argument("objective: reference drift dimension mismatch");
  }

  std::vector<Batch> states;
  std::vector<Batch> noises;
  std::vector<Batch> residuals;  // u - u0 (or u)
  std::vector<std::unique_ptr<DriftTape>> tapes(static_cast<std::size_t>(k));
  states.reserve(static_cast<std::size_t>(k) + 1);
  noises.reserve(static_cast<std::size_t>(k));
  residuals.reserve(static_cast<std::size_t>(k));

  Vector per_path = Vector::Zero(S);
  Batch x = Batch::Zero(S, d);
  Batch xi(S, d);
  Batch u0;
  for (Index j = 0; j < k; ++j) {
    const double t = static_cast<double>(j) * dt;
    Batch u = drift.forward(t, x, &tapes[static_cast<std::size_t>(j)]);
    if (!u.allFinite()) {
      for (Index s = 0; s < S; ++s) {
        if (!u.row(s).allFinite()) {
          throw NumericError("non-finite drift at path " + std::to_string(s) + ", step " +
                             std::to_string(j));
        }
      }
    }
    draw_brownian_noise(o.seed, j, xi);
    Batch r = u;
    if (setup.reference) {
      setup.reference->evaluate(t, x, u0);
      r -= u0;
    }
    for (Index s = 0; s < S; ++s) {
      per_path(s) += r.row(s).squaredNorm() * dt / (2.0 * gamma);
      if (o.include_ito) per_path(s) += ito_scale * r.row(s).dot(xi.row(s));
    }
    states.push_back(x);
    noises.push_back(xi);
    residuals.push_back(std::move(r));
    x = x + u * dt + noise_scale * xi;
  }

  // Terminal cost and its gradient, already divided by S.
  Batch adj = Batch::Zero(S, d);
  const double log_norm = -0.5 * static_cast<double>(d) * (kLogTwoPi + std::log(gamma));
  Vector g(d);
  for (Index s = 0; s < S; ++s) {
    const Vector theta = x.row(s).transpose();
    g.setZero();
    double log_density = model.log_lik_sum(theta, model.data(), setup.rows, setup.scale, &g);
    if (setup.terminal == Terminal::full) log_density += model.log_prior(theta, &g);
    if (!std::isfinite(log_density) || log_density < kLogDensityFloor) {
      throw NumericError("log density " + std::to_string(log_density) +
                         " at terminal sample of path " + std::to_string(s) + ": " +
                         describe_row(x, s));
    }
    double cost = -log_density;
    Vector grad_cost = -g;
    if (setup.terminal == Terminal::full) {
      cost += log_norm - 0.5 * theta.squaredNorm() / gamma;
      grad_cost -= theta / gamma;
    }
    per_path(s) += cost;
    adj.row(s) = inv_s * grad_cost.transpose();
  }

  ObjectiveEstimate est;
  est.estimator = o.estimator;
  est.batch = {static_cast<Index>(setup.rows.size()), model.data().size(), S};
  est.value = per_path.mean();
  est.gradient = Vector::Zero(drift.param_count());
  if (o.keep_per_path) est.per_path = per_path;
  est.terminal = x;

  // Adjoint sweep: adj holds dL/dX_{j+1} on entry to step j.
  Batch grad_states(S, d);
  Batch grad_ito(S, d);
  Batch grad_ref(S, d);
  const bool stl = o.estimator == Estimator::stl && o.include_ito;
  for (Index j = k - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const double t = static_cast<double>(j) * dt;
    Batch g_res = (inv_s * dt / gamma) * residuals[ju];
    Batch g_ito;
    if (o.include_ito) g_ito = (inv_s * ito_scale) * noises[ju];
    Batch upstream = adj * dt + g_res;
    if (o.include_ito && !stl) upstream += g_ito;
    drift.backward(*tapes[ju], upstream, grad_states, &est.gradient);
    Batch next = adj + grad_states;
    if (stl) {
      // The Ito integrand still moves with the state; only the weights are held fixed.
      drift.backward(*tapes[ju], g_ito, grad_ito, nullptr);
      next += grad_ito;
    }
    if (setup.reference) {
      Batch g_u0 = g_res;
      if (o.include_ito) g_u0 += g_ito;
      setup.reference->vjp(t, states[ju], g_u0, grad_ref);
      next -= grad_ref;
    }
    adj = std::move(next);
    tapes[ju].reset();
  }
  return est;
}

std::vector<Index> validated_batch(const BayesModel& model, std::span<const Index> batch) {
  const Index n = model.data().size();
  if (batch.empty()) throw std::invalid_argument("objective_minibatch: empty batch");
  std::vector<Index> sorted(batch.begin(), batch.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] < 0 || sorted[i] >= n) {
      throw std::invalid_argument("objective_minibatch: index " + std::to_string(sorted[i]) +
                                  " out of range");
    }
    if (i > 0 && sorted[i] == sorted[i - 1]) {
      throw std::invalid_argument("objective_minibatch: duplicate index " +
                                  std::to_string(sorted[i]));
    }
  }
  return sorted;
}

}  // namespace

const char* estimator_name(Estimator e) {
  return e == Estimator::stl ? "stl" : "relative_entropy";
}

Estimator parse_estimator(const std::string& name) {
  if (name == "stl") return Estimator::stl;
  if (name == "relative_entropy") return Estimator::relative_entropy;
  throw std::invalid_argument("unknown estimator '" + name + "'");
}

ObjectiveEstimate objective_full(ControlledDrift& drift, const BayesModel& model,
                                 const ObjectiveOptions& options) {
  const auto rows = model.all_rows();
  return evaluate(drift, model, options, {Terminal::full, rows, 1.0, nullptr});
}

ObjectiveEstimate objective_minibatch(ControlledDrift& drift, const BayesModel& model,
                                      const ObjectiveOptions& options,
                                      std::span<const Index> batch) {
  const auto rows = validated_batch(model, batch);
  const double scale =
      static_cast<double>(model.data().size()) / static_cast<double>(rows.size());
  // Keep the caller's order so full batches reduce exactly like objective_full.
  return evaluate(drift, model, options, {Terminal::full, batch, scale, nullptr});
}

ObjectiveEstimate objective_reference_drift(ControlledDrift& drift, const BayesModel& model,
                                            const DriftField& reference,
                                            const ObjectiveOptions& options) {
  const auto rows = model.all_rows();
  return evaluate(drift, model, options, {Terminal::likelihood_only, rows, 1.0, &reference});
}

ObjectiveEstimate objective_reduced(ControlledDrift& drift, const BayesModel& model,
                                    const ObjectiveOptions& options) {
  const auto rows = model.all_rows();
  return evaluate(drift, model, options, {Terminal::likelihood_only, rows, 1.0, nullptr});
}

VarianceProbe estimator_variance_probe(ControlledDrift& drift, const BayesModel& model,
                                       const ObjectiveOptions& options,
                                       std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 2) throw std::invalid_argument("estimator_variance_probe: need >= 2 seeds");
  const Index n = static_cast<Index>(seeds.size());
  const Index p = drift.param_count();
  VarianceProbe probe;
  probe.relative_entropy.resize(n, p);
  probe.stl.resize(n, p);
  ObjectiveOptions o = options;
  o.include_ito = true;
  for (Index i = 0; i < n; ++i) {
    o.seed = seeds[static_cast<std::size_t>(i)];
    o.estimator = Estimator::relative_entropy;
    probe.relative_entropy.row(i) = objective_full(drift, model, o).gradient.transpose();
    o.estimator = Estimator::stl;
    probe.stl.row(i) = objective_full(drift, model, o).gradient.transpose();
  }
  auto summarize = [n](const Batch& g, Vector& mean, Vector& var) {
    mean = g.colwise().mean().transpose();
    var = (g.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() /
          static_cast<double>(n - 1);
  };
  Vector var_re, var_stl;
  summarize(probe.relative_entropy, probe.relative_entropy_mean, var_re);
  summarize(probe.stl, probe.stl_mean, var_stl);
  probe.relative_entropy_variance = var_re.sum();
  probe.stl_variance = var_stl.sum();
  probe.ratio = probe.relative_entropy_variance > 0.0
                    ? probe.stl_variance / probe.relative_entropy_variance
                    : 0.0;
  for (Index j = 0; j < p; ++j) {
    const double se = std::sqrt((var_re(j) + var_stl(j)) / static_cast<double>(n));
    const double diff = std::abs(probe.relative_entropy_mean(j) - probe.stl_mean(j));
    if (se > 0.0) probe.max_mean_z = std::max(probe.max_mean_z, diff / se);
  }
  return probe;
}

}  // namespace nsfs
