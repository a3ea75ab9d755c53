#include "nsfs/adam.hpp"

#include <cmath>

namespace nsfs {

AdamState AdamState::for_weights(Index n, double step_size) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.step_size = step_size;
  return s;
}

void adam_step(AdamState& state, Vector& weights, const Vector& gradient) {
  if (weights.size() != gradient.size()) {
    throw std::invalid_argument("adam_step: gradient length differs from weight length");
  }
  if (state.first_moment.size() == 0 && state.second_moment.size() == 0) {
    state.first_moment = Vector::Zero(weights.size());
    state.second_moment = Vector::Zero(weights.size());
  }
  if (state.first_moment.size() != weights.size() || state.second_moment.size() != weights.size()) {
    throw std::invalid_argument("adam_step: moment length differs from weight length");
  }
  for (Index i = 0; i < gradient.size(); ++i) {
    if (!std::isfinite(gradient(i))) {
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  weights.array() -= state.step_size * (state.first_moment.array() / c1) /
                     ((state.second_moment.array() / c2).sqrt() + state.eps);
}

}  // namespace nsfs
