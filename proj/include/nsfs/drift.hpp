#pragma once

#include "nsfs/types.hpp"

#include <memory>

namespace nsfs {

/// Opaque record of one batched forward evaluation, consumed by backward().
class DriftTape {
 public:
  virtual ~DriftTape() = default;
};

/// A time-dependent vector field with trainable weights.
///
/// forward() may couple rows (batch normalization), so backward() takes and
/// returns whole batches.
class ControlledDrift {
 public:
  virtual ~ControlledDrift() = default;

  virtual Index state_dim() const = 0;
  virtual Index param_count() const = 0;
  virtual Vector& params() = 0;
  virtual const Vector& params() const = 0;

  /// Evaluates the drift for every row of `states`. When `tape` is non-null it
  /// receives what backward() needs.
  virtual Batch forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) = 0;

  /// Vector-Jacobian products for upstream dL/du: writes dL/dstates into
  /// `grad_states` and, when non-null, adds dL/dweights into `grad_params`.
  virtual void backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                        Vector* grad_params) const = 0;

  /// Evaluation for sampling: records nothing and leaves running statistics alone.
  /// `batch_statistics` picks per-batch normalization for drifts that normalize.
  virtual Batch sample_forward(double t, const Batch& states, bool batch_statistics) {
    (void)batch_statistics;
    return forward(t, states, nullptr);
  }
};

/// A fixed (non-trainable) drift u(t, x) with its state Jacobian.
class DriftField {
 public:
  virtual ~DriftField() = default;
  virtual Index state_dim() const = 0;
  virtual void evaluate(double t, const Batch& states, Batch& out) const = 0;

  /// Writes J_x(u)^T upstream row by row into `grad_states`. The default uses
  /// central differences of evaluate().
  virtual void vjp(double t, const Batch& states, const Batch& upstream, Batch& grad_states) const;
};

class ZeroDrift final : public DriftField {
 public:
  explicit ZeroDrift(Index dim) : dim_(dim) {}
  Index state_dim() const override { return dim_; }
  void evaluate(double, const Batch& states, Batch& out) const override {
    out.setZero(states.rows(), dim_);
  }
  void vjp(double, const Batch& states, const Batch&, Batch& grad_states) const override {
    grad_states.setZero(states.rows(), dim_);
  }

 private:
  Index dim_;
};

/// u(t, x) = D(t)^{-1} (gamma mu + (Sigma - gamma I) x), D(t) = gamma I + t (Sigma - gamma I):
/// the exact Foellmer drift steering sqrt(gamma) Brownian motion from 0 to N(mu, Sigma).
class GaussianFollmerDrift final : public DriftField {
 public:
  GaussianFollmerDrift(Vector mean, Matrix cov, double gamma);
  Index state_dim() const override { return mean_.size(); }
  void evaluate(double t, const Batch& states, Batch& out) const override;
  void vjp(double t, const Batch& states, const Batch& upstream, Batch& grad_states) const override;

  /// Slope matrix D(t)^{-1}(Sigma - gamma I) and offset gamma D(t)^{-1} mu.
  Matrix slope(double t) const;
  Vector offset(double t) const;

 private:
  Vector mean_;
  Matrix cov_;
  double gamma_;
};

/// u(t, x) = base(t, x) + sum_m eps_m phi_m(t, x) with a fixed smooth bounded basis
/// per coordinate: {1, tanh(x_i), t sin(x_i)}. The coefficients eps start at 0, so
/// the field equals `base` until trained; used to probe estimator derivatives.
class PerturbedDrift final : public ControlledDrift {
 public:
  explicit PerturbedDrift(std::shared_ptr<const DriftField> base);

  Index state_dim() const override { return base_->state_dim(); }
  Index param_count() const override { return params_.size(); }
  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }

  Batch forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) override;
  void backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                Vector* grad_params) const override;

  static constexpr Index kBasisPerDim = 3;

 private:
  std::shared_ptr<const DriftField> base_;
  Vector params_;
};

}  // namespace nsfs
