#pragma once

#include "nsfs/drift.hpp"
#include "nsfs/model.hpp"

#include <span>
#include <vector>

namespace nsfs {

enum class Estimator {
  relative_entropy,  // pathwise gradient with the drift live inside the Ito term
  stl,               // drift weights detached inside the Ito term
};

const char* estimator_name(Estimator e);
Estimator parse_estimator(const std::string& name);

struct ObjectiveOptions {
  Index paths = 32;    // S
  Index steps = 20;    // k, dt = 1 / k
  double gamma = 1.0;
  std::uint64_t seed = 0;
  Estimator estimator = Estimator::relative_entropy;
  bool include_ito = true;
  bool keep_per_path = false;
};

struct BatchInfo {
  Index batch_size = 0;  // B
  Index data_size = 0;   // N
  Index paths = 0;       // S
};

struct ObjectiveEstimate {
  double value = 0.0;
  Vector gradient;
  Estimator estimator = Estimator::relative_entropy;
  BatchInfo batch;
  Vector per_path;  // filled when keep_per_path
  Batch terminal;   // S x d terminal states
};

/// Relative-entropy control objective over all data:
/// mean_s [ sum_j |u_j|^2 dt / 2 gamma + Ito term + ln N(X_k | 0, gamma I) - ln p(X, X_k) ].
ObjectiveEstimate objective_full(ControlledDrift& drift, const BayesModel& model,
                                 const ObjectiveOptions& options);

/// Same objective with the likelihood replaced by (N/B) sum over `batch`.
/// Throws std::invalid_argument on duplicate or out-of-range indices.
ObjectiveEstimate objective_minibatch(ControlledDrift& drift, const BayesModel& model,
                                      const ObjectiveOptions& options,
                                      std::span<const Index> batch);

/// Control cost measured against a reference drift u0 whose terminal law is the prior:
/// mean_s [ sum_j |u_j - u0_j|^2 dt / 2 gamma + Ito term of (u - u0) - ln p(X | X_k) ].
ObjectiveEstimate objective_reference_drift(ControlledDrift& drift, const BayesModel& model,
                                            const DriftField& reference,
                                            const ObjectiveOptions& options);

/// Form valid when the prior is N(0, gamma I): running cost, Ito term and the
/// negative log likelihood only.
ObjectiveEstimate objective_reduced(ControlledDrift& drift, const BayesModel& model,
                                    const ObjectiveOptions& options);

struct VarianceProbe {
  Batch relative_entropy;  // one gradient per seed (rows)
  Batch stl;
  Vector relative_entropy_mean;
  Vector stl_mean;
  double relative_entropy_variance = 0.0;  // trace of the per-seed gradient covariance
  double stl_variance = 0.0;
  double ratio = 0.0;  // stl / relative_entropy
  /// Largest |mean difference| / combined standard error over parameters.
  double max_mean_z = 0.0;
};

/// Evaluates both estimators on common noise for every seed in `seeds`.
VarianceProbe estimator_variance_probe(ControlledDrift& drift, const BayesModel& model,
                                       const ObjectiveOptions& options,
                                       std::span<const std::uint64_t> seeds);

}  // namespace nsfs
