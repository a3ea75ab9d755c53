#pragma once

#include "nsfs/model.hpp"
#include "nsfs/samples.hpp"

#include <optional>

namespace nsfs {

/// lambda(i) = a / (i + b)^exponent.
struct SgldSchedule {
  double a = 1e-3;
  double b = 10.0;
  double exponent = 0.55;

  double operator()(Index i) const;
  /// Throws std::invalid_argument unless a > 0, b > 0 and exponent in (0.5, 1].
  void validate() const;
};

struct SgldOptions {
  Index iterations = 300;
  Index batch_size = 32;
  Index samples = 100;
  /// Negative: keep `samples` iterates spread evenly over the final third.
  Index burn_in = -1;
  Index thin = 1;  // used with an explicit burn_in
  bool inject_noise = true;
  std::uint64_t seed = 0;
  /// Starting point; the origin when empty (or a prior draw with init_from_prior).
  std::optional<Vector> init;
  bool init_from_prior = false;
};

/// theta += (lambda(i) / 2) (grad ln p(theta) + (N/B) sum_batch grad ln p(x | theta)) + N(0, lambda(i) I).
SampleSet sgld_run(const BayesModel& model, const SgldSchedule& schedule,
                   const SgldOptions& options);

/// Iterates kept by sgld_run for the given options (ascending).
std::vector<Index> sgld_kept_iterations(const SgldOptions& options);

/// Step size eta(i) = a / (i + b)^exponent; exponent 0 gives a constant step a.
struct StepSchedule {
  double a = 1e-2;
  double b = 1.0;
  double exponent = 0.0;
  double operator()(Index i) const;
};

struct SgdOptions {
  Index iterations = 300;
  Index batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<Vector> init;
  bool init_from_prior = false;
};

/// Minibatch gradient ascent on the log joint; returns the final iterate.
Vector sgd_run(const BayesModel& model, const StepSchedule& step, const SgdOptions& options);

/// Indices of the minibatch used at `iteration` (all rows, in order, when B = N).
std::vector<Index> draw_batch(Index n, Index batch_size, std::uint64_t seed, Index iteration);

}  // namespace nsfs
