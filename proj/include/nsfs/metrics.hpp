#pragma once

#include "nsfs/model.hpp"
#include "nsfs/samples.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>

namespace nsfs {

/// Sum over equal-width bins of (|bin| / n) |accuracy(bin) - confidence(bin)|.
double ece(std::span<const double> confidences, std::span<const bool> correct, int n_bins = 10);

/// Absent fields are serialized as null.
struct PredictiveReport {
  std::string task;
  std::optional<double> accuracy;
  std::optional<double> ece;
  std::optional<double> avg_log_lik;  // mean over test points of ln p(y | x, samples)
  std::optional<double> sum_log_lik;  // same, summed
  std::optional<double> mse;
  Index n_test = 0;
  Index n_posterior_samples = 0;
  int ece_bins = 10;

  std::string to_json() const;
  static PredictiveReport from_json(const std::string& text);
};

/// Posterior-predictive evaluation of `samples` on `test`.
PredictiveReport predictive_eval(const SampleSet& samples, const BayesModel& model,
                                 const Dataset& test, int ece_bins = 10);

/// Predictive mean and spread on a grid of scalar inputs (regression models with 1 feature).
struct PredictiveCurve {
  Vector x;
  Vector mean;
  Vector sd_function;    // spread of f_theta(x) across samples
  Vector sd_predictive;  // including observation noise
};
PredictiveCurve predictive_curve(const SampleSet& samples, const BayesModel& model,
                                 double lo, double hi, Index points);
void write_curve_csv(const PredictiveCurve& curve, const std::string& path);

struct MomentDiagnostics {
  Vector mean_error;  // sample - oracle
  Vector var_error;
  Vector mean_z;      // errors divided by Monte Carlo standard errors
  Vector var_z;
  std::optional<double> ks;  // 1D only, when an oracle CDF is supplied
  double ks_critical_1pct = 0.0;
};

MomentDiagnostics moment_diagnostics(const Batch& samples, const Vector& mean, const Vector& var,
                                     const std::function<double(double)>& cdf = {});

/// sup_x |F_n(x) - F(x)|.
double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf);

}  // namespace nsfs
