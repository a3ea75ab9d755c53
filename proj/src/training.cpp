#include "nsfs/training.hpp"

#include "nsfs/rng.hpp"
#include "nsfs/sde.hpp"
#include "nsfs/sgld.hpp"

#include <chrono>

namespace nsfs {

TrainResult train_nsfs(ControlledDrift& drift, const BayesModel& model, const TrainOptions& o) {
  if (o.iterations < 0) throw std::invalid_argument("train_nsfs: negative iteration count");
  if (!(o.step_size > 0.0)) throw std::invalid_argument("train_nsfs: step size must be positive");
  const Index n = model.data().size();
  const bool full = o.batch_size <= 0 || o.batch_size >= n;
  AdamState adam = AdamState::for_weights(drift.param_count(), o.step_size);
  TrainResult result;
  result.curve.reserve(static_cast<std::size_t>(o.iterations));
  const auto start = std::chrono::steady_clock::now();
  ObjectiveOptions obj = o.objective;
  for (Index i = 0; i < o.iterations; ++i) {
    obj.seed = mix_seed(o.seed, static_cast<std::uint64_t>(i));
    ObjectiveEstimate est;
    try {
      if (full) {
        est = objective_full(drift, model, obj);
      } else {
        const auto rows = draw_batch(n, o.batch_size, o.seed, i);
        est = objective_minibatch(drift, model, obj, rows);
      }
      adam_step(adam, drift.params(), est.gradient);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(i) + ": " + e.what());
    }
    result.curve.push_back(est.value);
    if (o.on_iteration) o.on_iteration(i, est.value);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.time_limit_seconds > 0.0 && elapsed > o.time_limit_seconds && i + 1 < o.iterations) {
      result.stopped_early = true;
      break;
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

SampleSet sample_nsfs(ControlledDrift& drift, Index paths, Index steps, double gamma,
                      std::uint64_t seed, bool batch_statistics) {
  const auto start = std::chrono::steady_clock::now();
  auto evaluator = [&](Index, double t, const Batch& x, Batch& out) {
    out = drift.sample_forward(t, x, batch_statistics);
  };
  const auto traj = em_integrate(evaluator, drift.state_dim(), paths, steps, gamma,
                                 mix_seed(seed, 0x5a3b1e),
                                 RecordFlags{false, false, false});
  SampleSet set;
  set.samples = traj.terminal;
  set.meta.method = "nsfs";
  set.meta.seed = seed;
  set.meta.gamma = gamma;
  set.meta.dt = traj.dt;
  set.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return set;
}

}  // namespace nsfs
