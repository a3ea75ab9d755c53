#pragma once

#include "nsfs/types.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace nsfs {

/// Drift callback used by the simulator: fills `out` (S x d) with the drift at
/// grid index `step` (time t = step * dt) for every row of `states`.
using DriftEvaluator =
    std::function<void(Index step, double t, const Batch& states, Batch& out)>;

struct RecordFlags {
  bool states = true;
  bool noises = true;
  bool drifts = true;
};

/// S parallel Euler-Maruyama paths on the uniform grid t_j = j / k.
///
/// When a component was not recorded its vector is empty; `terminal` is always
/// filled.
struct TrajectoryBatch {
  Index paths = 0;
  Index steps = 0;
  Index dim = 0;
  double dt = 0.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;

  std::vector<Batch> states;  // steps + 1 entries
  std::vector<Batch> noises;  // steps entries, standard normal
  std::vector<Batch> drifts;  // steps entries
  Batch terminal;

  double time(Index step) const { return static_cast<double>(step) * dt; }
};

/// Fills `out` (S x d) with the standard normal draws used for grid step `step`.
/// Row s draws from the stream keyed by (seed, s, step).
void draw_brownian_noise(std::uint64_t seed, Index step, Batch& out);

/// Simulates dTheta = u(t, Theta) dt + sqrt(gamma) dB from Theta_0 = 0.
TrajectoryBatch em_integrate(const DriftEvaluator& drift, Index dim, Index paths, Index steps,
                             double gamma, std::uint64_t seed, RecordFlags record = {});

/// Same recursion driven by externally supplied standard-normal increments.
TrajectoryBatch em_integrate_with_noise(const DriftEvaluator& drift,
                                        const std::vector<Batch>& noises, double gamma,
                                        RecordFlags record = {});

/// Re-walks the stored noise of `trajectories` under `drift`.
TrajectoryBatch replay(const TrajectoryBatch& trajectories, const DriftEvaluator& drift);

/// Merges consecutive pairs of fine-grid normals into the normals of the
/// grid with half as many steps: (xi_{2j} + xi_{2j+1}) / sqrt(2).
std::vector<Batch> coarsen_noise(const std::vector<Batch>& fine);

/// Covariance of the linear SDE dTheta = A Theta dt + sqrt(gamma) dB, Theta_0 = 0:
/// gamma * int_0^t exp(A s) exp(A s)^T ds, by composite Gauss-Legendre quadrature.
Matrix linear_sde_covariance(const Matrix& a, double gamma, double t);

/// Exact covariance of the Euler-Maruyama chain for the same linear SDE after
/// `steps` steps of size t / steps.
Matrix euler_linear_covariance(const Matrix& a, double gamma, double t, Index steps);

/// Writes (path, step, t, dim, value) rows plus a JSON sidecar with the run settings.
void write_trajectory_csv(const TrajectoryBatch& trajectories, const std::filesystem::path& csv);

}  // namespace nsfs
