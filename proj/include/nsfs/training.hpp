#pragma once

#include "nsfs/adam.hpp"
#include "nsfs/objective.hpp"
#include "nsfs/samples.hpp"

#include <functional>
#include <vector>

namespace nsfs {

struct TrainOptions {
  Index iterations = 300;          // M
  double step_size = 1e-4;         // Adam alpha
  Index batch_size = 0;            // B; 0 or >= N means the whole data set
  ObjectiveOptions objective;      // S, k, gamma, estimator; its seed is ignored
  std::uint64_t seed = 0;
  /// Optional observer called after each Adam step with (iteration, objective value).
  std::function<void(Index, double)> on_iteration;
  /// Stop early once this many seconds have elapsed; 0 disables.
  double time_limit_seconds = 0.0;
};

struct TrainResult {
  std::vector<double> curve;  // objective value per iteration
  double wall_seconds = 0.0;
  bool stopped_early = false;  // hit the wall-time limit
};

/// Adam on the minibatch objective. Iteration i uses noise seed mix_seed(seed, i)
/// and the batch draw_batch(N, B, seed, i).
TrainResult train_nsfs(ControlledDrift& drift, const BayesModel& model, const TrainOptions& options);

/// Terminal states of `paths` fresh Euler-Maruyama paths under the drift.
SampleSet sample_nsfs(ControlledDrift& drift, Index paths, Index steps, double gamma,
                      std::uint64_t seed, bool batch_statistics);

}  // namespace nsfs
