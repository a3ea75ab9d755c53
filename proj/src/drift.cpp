#include "nsfs/drift.hpp"

#include <cmath>

namespace nsfs {

void DriftField::vjp(double t, const Batch& states, const Batch& upstream,
                     Batch& grad_states) const {
  const Index n = states.rows();
  const Index d = states.cols();
  grad_states.setZero(n, d);
  Batch plus = states;
  Batch minus = states;
  Batch up(n, d), down(n, d);
  for (Index i = 0; i < d; ++i) {
    const double h = 1e-5 * std::max(1.0, states.col(i).cwiseAbs().maxCoeff());
    plus.col(i).array() += h;
    minus.col(i).array() -= h;
    evaluate(t, plus, up);
    evaluate(t, minus, down);
    // Column i of the Jacobian, row by row.
    grad_states.col(i) = ((up - down).cwiseProduct(upstream)).rowwise().sum() / (2.0 * h);
    plus.col(i) = states.col(i);
    minus.col(i) = states.col(i);
  }
}

GaussianFollmerDrift::GaussianFollmerDrift(Vector mean, Matrix cov, double gamma)
    : mean_(std::move(mean)), cov_(std::move(cov)), gamma_(gamma) {
  if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
    throw std::invalid_argument("GaussianFollmerDrift: covariance shape mismatch");
  }
  if (!(gamma_ > 0.0)) throw std::invalid_argument("GaussianFollmerDrift: gamma must be > 0");
}

Matrix GaussianFollmerDrift::slope(double t) const {
  const Index d = mean_.size();
  const Matrix excess = cov_ - gamma_ * Matrix::Identity(d, d);
  const Matrix denom = gamma_ * Matrix::Identity(d, d) + t * excess;
  return denom.ldlt().solve(excess);
}

Vector GaussianFollmerDrift::offset(double t) const {
  const Index d = mean_.size();
  const Matrix denom = gamma_ * Matrix::Identity(d, d) + t * (cov_ - gamma_ * Matrix::Identity(d, d));
  return denom.ldlt().solve(gamma_ * mean_);
}

void GaussianFollmerDrift::evaluate(double t, const Batch& states, Batch& out) const {
  const Matrix a = slope(t);
  const Vector b = offset(t);
  out = states * a.transpose();
  out.rowwise() += b.transpose();
}

void GaussianFollmerDrift::vjp(double t, const Batch&, const Batch& upstream,
                               Batch& grad_states) const {
  grad_states = upstream * slope(t);
}

namespace {

class PerturbedTape final : public DriftTape {
 public:
  double t = 0.0;
  Batch states;
};

}  // namespace

PerturbedDrift::PerturbedDrift(std::shared_ptr<const DriftField> base)
    : base_(std::move(base)), params_(Vector::Zero(base_->state_dim() * kBasisPerDim)) {}

Batch PerturbedDrift::forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) {
  Batch out;
  base_->evaluate(t, states, out);
  const Index d = state_dim();
  for (Index i = 0; i < d; ++i) {
    const double c0 = params_(kBasisPerDim * i);
    const double c1 = params_(kBasisPerDim * i + 1);
    const double c2 = params_(kBasisPerDim * i + 2);
    out.col(i).array() += c0 + c1 * states.col(i).array().tanh() +
                          c2 * t * states.col(i).array().sin();
  }
  if (tape) {
    auto rec = std::make_unique<PerturbedTape>();
    rec->t = t;
    rec->states = states;
    *tape = std::move(rec);
  }
  return out;
}

void PerturbedDrift::backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                              Vector* grad_params) const {
  const auto* rec = dynamic_cast<const PerturbedTape*>(&tape);
  if (!rec) throw StateError("PerturbedDrift::backward: foreign tape");
  const double t = rec->t;
  const Batch& x = rec->states;
  base_->vjp(t, x, upstream, grad_states);
  const Index d = state_dim();
  for (Index i = 0; i < d; ++i) {
    const double c1 = params_(kBasisPerDim * i + 1);
    const double c2 = params_(kBasisPerDim * i + 2);
    const auto th = x.col(i).array().tanh();
    const auto g = upstream.col(i).array();
    grad_states.col(i).array() += g * (c1 * (1.0 - th * th) + c2 * t * x.col(i).array().cos());
    if (grad_params) {
      (*grad_params)(kBasisPerDim * i) += g.sum();
      (*grad_params)(kBasisPerDim * i + 1) += (g * th).sum();
      (*grad_params)(kBasisPerDim * i + 2) += (g * t * x.col(i).array().sin()).sum();
    }
  }
}

}  // namespace nsfs
