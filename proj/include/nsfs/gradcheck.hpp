#pragma once

#include "nsfs/drift.hpp"
#include "nsfs/model.hpp"
#include "nsfs/objective.hpp"

#include <functional>
#include <string>
#include <vector>

namespace nsfs {

/// Outcome of comparing an analytic gradient with central differences.
struct GradComparison {
  std::string what;
  double rel_error = 0.0;  // |a - n|_inf / max(|a|_inf, |n|_inf)
  Vector analytic;
  Vector numeric;
};

/// Central differences of f at x with step h * max(1, |x_i|).
Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-5);

double relative_error(const Vector& analytic, const Vector& numeric);

/// Prior, every single-datum likelihood and a scaled batch sum.
std::vector<GradComparison> check_model_gradients(const BayesModel& model, const Vector& theta,
                                                  double h = 1e-5);

/// L = sum(weights .* u(t, states)) differentiated in the drift weights and the states.
/// The drift must be deterministic for fixed weights (train-mode batch norm is).
std::vector<GradComparison> check_drift_gradients(ControlledDrift& drift, double t,
                                                  const Batch& states, const Batch& weights,
                                                  double h = 1e-5);

/// Relative-entropy objective value vs its weight gradient at fixed noise.
GradComparison check_objective_gradient(ControlledDrift& drift, const BayesModel& model,
                                        const ObjectiveOptions& options, double h = 1e-5);

}  // namespace nsfs
