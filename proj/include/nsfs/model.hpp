#pragma once

#include "nsfs/rng.hpp"
#include "nsfs/types.hpp"

#include <span>
#include <vector>

namespace nsfs {

enum class Task {
  density,                // unsupervised: the datum is the feature row
  regression,             // Gaussian noise around a predicted mean
  binary_classification,  // labels in {-1, +1}
};

/// Dense feature rows plus one target per row.
struct Dataset {
  Batch features;  // N x m (m may be 0)
  Vector targets;  // N

  Index size() const { return targets.size(); }
  Index feature_dim() const { return features.cols(); }
  Dataset subset(std::span<const Index> rows) const;
};

/// Target posterior p(theta | X) proportional to p(theta) prod_i p(x_i | theta).
///
/// Gradient outputs are accumulated (`*grad += ...`) so callers can sum terms
/// into one buffer. Densities are evaluated at any dataset of the model's shape,
/// which is how held-out data is scored.
class BayesModel {
 public:
  virtual ~BayesModel() = default;

  virtual Index dim() const = 0;
  virtual Task task() const = 0;
  virtual const Dataset& data() const = 0;

  virtual double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const = 0;
  virtual double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                         Vector* grad) const = 0;

  /// scale * sum_{i in rows} ln p(x_i | theta); the gradient is scaled the same way.
  virtual double log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                             std::span<const Index> rows, double scale, Vector* grad) const;

  /// Regression mean or P(y = +1 | x) for classification.
  virtual double predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                         Index i) const;

  /// Observation noise standard deviation of regression models.
  virtual double noise_sd() const;

  /// One draw from the prior.
  virtual Vector sample_prior(CounterRng& rng) const;

  /// Full-data log likelihood.
  double log_lik_all(const Eigen::Ref<const Vector>& theta, Vector* grad) const;
  std::vector<Index> all_rows() const;
};

}  // namespace nsfs
