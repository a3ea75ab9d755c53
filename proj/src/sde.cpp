#include "nsfs/sde.hpp"

#include "nsfs/rng.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include "json.hpp"
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nsfs {

namespace {

void check_grid(Index steps) {
  if (steps < 1) throw std::invalid_argument("em_integrate: step count must be >= 1");
  const double dt = 1.0 / static_cast<double>(steps);
  const double total = static_cast<double>(steps) * dt;
  if (std::abs(total - 1.0) > std::numeric_limits<double>::epsilon()) {
    throw std::invalid_argument("em_integrate: k * dt differs from 1 by more than one ulp");
  }
}

void check_finite_drift(const Batch& drift, Index step) {
  if (drift.allFinite()) return;
  for (Index s = 0; s < drift.rows(); ++s) {
    if (!drift.row(s).allFinite()) {
      throw NumericError("non-finite drift at path " + std::to_string(s) + ", step " +
                         std::to_string(step));
    }
  }
}

template <typename NoiseSource>
TrajectoryBatch integrate(const DriftEvaluator& drift, Index dim, Index paths, Index steps,
                          double gamma, RecordFlags record, NoiseSource&& noise_for_step) {
  check_grid(steps);
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("em_integrate: gamma must be finite and non-negative");
  }
  if (paths < 1 || dim < 1) throw std::invalid_argument("em_integrate: empty batch");

  TrajectoryBatch out;
  out.paths = paths;
  out.steps = steps;
  out.dim = dim;
  out.dt = 1.0 / static_cast<double>(steps);
  out.gamma = gamma;

  const double noise_scale = std::sqrt(gamma * out.dt);
  Batch state = Batch::Zero(paths, dim);
  Batch u(paths, dim);
  Batch xi(paths, dim);
  if (record.states) {
    out.states.reserve(steps + 1);
    out.states.push_back(state);
  }
  if (record.noises) out.noises.reserve(steps);
  if (record.drifts) out.drifts.reserve(steps);

  for (Index j = 0; j < steps; ++j) {
    u.setZero();
    drift(j, out.time(j), state, u);
    if (u.rows() != paths || u.cols() != dim) {
      throw std::invalid_argument("em_integrate: drift returned wrong shape");
    }
    check_finite_drift(u, j);
    noise_for_step(j, xi);
    state = state + u * out.dt + noise_scale * xi;
    if (record.states) out.states.push_back(state);
    if (record.noises) out.noises.push_back(xi);
    if (record.drifts) out.drifts.push_back(u);
  }
  out.terminal = std::move(state);
  return out;
}

}  // namespace

void draw_brownian_noise(std::uint64_t seed, Index step, Batch& out) {
  for (Index s = 0; s < out.rows(); ++s) {
    CounterRng rng(seed, Stream::brownian, static_cast<std::uint32_t>(s),
                   static_cast<std::uint32_t>(step));
    for (Index i = 0; i < out.cols(); ++i) out(s, i) = rng.normal();
  }
}

TrajectoryBatch em_integrate(const DriftEvaluator& drift, Index dim, Index paths, Index steps,
                             double gamma, std::uint64_t seed, RecordFlags record) {
  auto out = integrate(drift, dim, paths, steps, gamma, record,
                       [seed](Index j, Batch& xi) { draw_brownian_noise(seed, j, xi); });
  out.seed = seed;
  return out;
}

TrajectoryBatch em_integrate_with_noise(const DriftEvaluator& drift,
                                        const std::vector<Batch>& noises, double gamma,
                                        RecordFlags record) {
  if (noises.empty()) throw std::invalid_argument("em_integrate_with_noise: no noise");
  const Index paths = noises.front().rows();
  const Index dim = noises.front().cols();
  for (const auto& n : noises) {
    if (n.rows() != paths || n.cols() != dim) {
      throw std::invalid_argument("em_integrate_with_noise: ragged noise array");
    }
  }
  return integrate(drift, dim, paths, static_cast<Index>(noises.size()), gamma, record,
                   [&noises](Index j, Batch& xi) { xi = noises[static_cast<std::size_t>(j)]; });
}

TrajectoryBatch replay(const TrajectoryBatch& trajectories, const DriftEvaluator& drift) {
  if (static_cast<Index>(trajectories.noises.size()) != trajectories.steps ||
      trajectories.steps == 0) {
    throw StateError("replay: trajectory batch did not retain its noise");
  }
  auto out = em_integrate_with_noise(drift, trajectories.noises, trajectories.gamma);
  out.seed = trajectories.seed;
  return out;
}

std::vector<Batch> coarsen_noise(const std::vector<Batch>& fine) {
  if (fine.size() % 2 != 0) throw std::invalid_argument("coarsen_noise: odd step count");
  std::vector<Batch> coarse;
  coarse.reserve(fine.size() / 2);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (std::size_t j = 0; j < fine.size(); j += 2) {
    coarse.push_back((fine[j] + fine[j + 1]) * inv_sqrt2);
  }
  return coarse;
}

Matrix linear_sde_covariance(const Matrix& a, double gamma, double t) {
  if (a.rows() != a.cols()) throw std::invalid_argument("linear_sde_covariance: A not square");
  if (t < 0.0) throw std::invalid_argument("linear_sde_covariance: negative time");
  using Rule = boost::math::quadrature::gauss<double, 20>;
  const auto& nodes = Rule::abscissa();
  const auto& weights = Rule::weights();
  const Index d = a.rows();
  Matrix sigma = Matrix::Zero(d, d);
  if (t == 0.0) return sigma;

  // Substituting s -> t - s the integrand becomes exp(A s) exp(A s)^T on [0, t].
  constexpr int panels = 64;
  const double h = t / panels;
  auto integrand = [&](double s) {
    const Matrix e = (a * s).exp();
    return Matrix(e * e.transpose());
  };
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * h;
    const double half = 0.5 * h;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] == 0.0) {
        sigma += weights[i] * half * integrand(mid);
      } else {
        sigma += weights[i] * half * (integrand(mid - half * nodes[i]) +
                                      integrand(mid + half * nodes[i]));
      }
    }
  }
  sigma *= gamma;
  if (!sigma.allFinite()) throw NumericError("linear_sde_covariance: overflow");
  return 0.5 * (sigma + sigma.transpose());
}

Matrix euler_linear_covariance(const Matrix& a, double gamma, double t, Index steps) {
  if (steps < 1) throw std::invalid_argument("euler_linear_covariance: steps must be >= 1");
  const Index d = a.rows();
  const double dt = t / static_cast<double>(steps);
  const Matrix step = Matrix::Identity(d, d) + a * dt;
  Matrix sigma = Matrix::Zero(d, d);
  for (Index j = 0; j < steps; ++j) {
    sigma = step * sigma * step.transpose();
    sigma.diagonal().array() += gamma * dt;
  }
  return sigma;
}

void write_trajectory_csv(const TrajectoryBatch& tr, const std::filesystem::path& csv) {
  if (tr.states.empty()) throw StateError("write_trajectory_csv: states were not recorded");
  std::ofstream out(csv);
  if (!out) throw IoError("cannot open " + csv.string() + " for writing");
  out << "path,step,t,dim,value\n";
  out.precision(17);
  for (Index s = 0; s < tr.paths; ++s) {
    for (Index j = 0; j <= tr.steps; ++j) {
      for (Index i = 0; i < tr.dim; ++i) {
        out << s << ',' << j << ',' << tr.time(j) << ',' << i << ','
            << tr.states[static_cast<std::size_t>(j)](s, i) << '\n';
      }
    }
  }
  nlohmann::json meta = {{"seed", tr.seed}, {"S", tr.paths}, {"k", tr.steps},
                         {"gamma", tr.gamma}, {"dim", tr.dim}};
  auto sidecar = csv;
  sidecar += ".json";
  std::ofstream js(sidecar);
  if (!js) throw IoError("cannot open " + sidecar.string() + " for writing");
  js << meta.dump(2) << '\n';
}

}  // namespace nsfs
