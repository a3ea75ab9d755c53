#pragma once

#include "nsfs/drift.hpp"
#include "nsfs/model.hpp"
#include "nsfs/samples.hpp"

#include <functional>
#include <random>

namespace nsfs {

/// ln f for f = pi / N(0, gamma I), known up to an additive constant.
///
/// `evaluate` fills ln f (M) and grad ln f (M x d) for the M rows of `points`.
struct TargetRatio {
  Index dim = 1;
  double gamma = 1.0;
  std::function<void(const Batch& points, Eigen::ArrayXd& log_f, Batch& grad)> evaluate;
};

/// pi = posterior of `model` (prior times full-data likelihood). The model must outlive the result.
TargetRatio ratio_from_model(const BayesModel& model, double gamma);
/// pi = N(mean, cov).
TargetRatio gaussian_target(const Vector& mean, const Matrix& cov, double gamma);
/// One-dimensional Gaussian mixture.
TargetRatio mixture_target(const Vector& weights, const Vector& means, const Vector& variances,
                           double gamma);
/// Adds `shift` to ln f.
TargetRatio shifted(TargetRatio ratio, double shift);

struct DriftEstimate {
  Vector drift;
  Vector std_error;  // from batch means
};

/// gamma * grad ln Q_{1-t} f(x), Q_s f(x) = E f(x + sqrt(s) z), z ~ N(0, gamma I), estimated by
/// the self-normalized ratio sum w_i grad ln f_i / sum w_i with w_i = f(x + sqrt(s) z_i).
DriftEstimate heat_semigroup_drift_mc(const TargetRatio& ratio, double t, const Vector& x,
                                      Index samples, std::uint64_t seed);

/// Same drift by tensor-product Gauss-Hermite quadrature; dim <= 2.
Vector semigroup_quadrature_oracle(const TargetRatio& ratio, double t, const Vector& x,
                                   int nodes = 160);

/// Gauss-Hermite nodes and weights for the weight exp(-h^2).
void gauss_hermite(int n, Vector& nodes, Vector& weights);

/// Exact (quadrature) semigroup drift as a drift field.
class QuadratureDrift final : public DriftField {
 public:
  QuadratureDrift(TargetRatio ratio, int nodes = 160);
  Index state_dim() const override { return ratio_.dim; }
  void evaluate(double t, const Batch& states, Batch& out) const override;

 private:
  TargetRatio ratio_;
  Vector nodes_;  // Gauss-Hermite rule, computed once
  Vector weights_;
};

struct SfsOptions {
  Index paths = 1000;    // S
  Index steps = 100;     // k
  Index mc_samples = 1000;  // M
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Euler-Maruyama with the Monte Carlo drift recomputed at every (path, step) from
/// fresh draws.
SampleSet sfs_sample(const TargetRatio& ratio, const SfsOptions& options);

/// Runs body(i) for i in [0, n) on up to `threads` workers; each index runs exactly once.
void parallel_for(Index n, int threads, const std::function<void(Index)>& body);

}  // namespace nsfs
