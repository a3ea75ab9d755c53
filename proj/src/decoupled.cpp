#include "nsfs/decoupled.hpp"

namespace nsfs {

namespace {

class DecoupledTape final : public DriftTape {
 public:
  std::unique_ptr<DriftTape> global;
  std::unique_ptr<DriftTape> local;
  Index paths = 0;
};

DriftNetShape local_shape(const DriftComposition& c, Index width, Index layers, bool bn) {
  return {c.local_dim + c.global_dim + c.data.cols(), c.local_dim, width, layers, bn};
}

}  // namespace

DecoupledDrift::DecoupledDrift(DriftComposition comp, Index width, Index hidden_layers,
                               bool batch_norm, std::uint64_t seed)
    : comp_(std::move(comp)),
      global_(DriftNetShape{comp_.global_dim, comp_.global_dim, width, hidden_layers, batch_norm},
              seed),
      local_(local_shape(comp_, width, hidden_layers, batch_norm), seed + 1) {
  if (comp_.global_dim < 1 || comp_.local_dim < 1 || comp_.locals() < 1) {
    throw std::invalid_argument("DecoupledDrift: slices must be non-empty");
  }
  params_.resize(global_.param_count() + local_.param_count());
  params_ << global_.params(), local_.params();
}

void DecoupledDrift::set_mode(NetMode mode) {
  global_.set_mode(mode);
  local_.set_mode(mode);
}

void DecoupledDrift::sync() {
  global_.params() = params_.head(global_.param_count());
  local_.params() = params_.tail(local_.param_count());
}

Batch DecoupledDrift::local_inputs(const Batch& states) const {
  if (states.cols() != comp_.state_dim()) {
    throw std::invalid_argument("DecoupledDrift: state width " + std::to_string(states.cols()) +
                                " does not match the slice layout " +
                                std::to_string(comp_.state_dim()));
  }
  const Index n = comp_.locals();
  const Index g = comp_.global_dim;
  const Index l = comp_.local_dim;
  const Index m = comp_.data.cols();
  Batch in(states.rows() * n, l + g + m);
  for (Index s = 0; s < states.rows(); ++s) {
    for (Index i = 0; i < n; ++i) {
      const Index r = s * n + i;
      in.block(r, 0, 1, l) = states.block(s, g + i * l, 1, l);
      in.block(r, l, 1, g) = states.block(s, 0, 1, g);
      if (m > 0) in.block(r, l + g, 1, m) = comp_.data.row(i);
    }
  }
  return in;
}

Batch DecoupledDrift::assemble(const Batch& global_out, const Batch& local_out, Index paths) const {
  const Index n = comp_.locals();
  const Index g = comp_.global_dim;
  const Index l = comp_.local_dim;
  Batch out(paths, comp_.state_dim());
  out.leftCols(g) = global_out;
  for (Index s = 0; s < paths; ++s) {
    for (Index i = 0; i < n; ++i) out.block(s, g + i * l, 1, l) = local_out.row(s * n + i);
  }
  return out;
}

Batch DecoupledDrift::forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) {
  sync();
  const Batch inputs = local_inputs(states);
  std::unique_ptr<DecoupledTape> rec;
  if (tape) rec = std::make_unique<DecoupledTape>();
  const Batch g = global_.forward(t, states.leftCols(comp_.global_dim), rec ? &rec->global : nullptr);
  const Batch h = local_.forward(t, inputs, rec ? &rec->local : nullptr);
  if (rec) {
    rec->paths = states.rows();
    *tape = std::move(rec);
  }
  return assemble(g, h, states.rows());
}

Batch DecoupledDrift::sample_forward(double t, const Batch& states, bool batch_statistics) {
  sync();
  const Batch inputs = local_inputs(states);
  const Batch phi = states.leftCols(comp_.global_dim);
  return assemble(global_.sample_forward(t, phi, batch_statistics),
                  local_.sample_forward(t, inputs, batch_statistics), states.rows());
}

void DecoupledDrift::backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                              Vector* grad_params) const {
  const auto* rec = dynamic_cast<const DecoupledTape*>(&tape);
  if (!rec) throw StateError("DecoupledDrift::backward: no recorded forward tape");
  const Index paths = rec->paths;
  const Index n = comp_.locals();
  const Index g = comp_.global_dim;
  const Index l = comp_.local_dim;
  if (upstream.rows() != paths || upstream.cols() != comp_.state_dim()) {
    throw std::invalid_argument("DecoupledDrift::backward: upstream shape mismatch");
  }
  Batch local_up(paths * n, l);
  for (Index s = 0; s < paths; ++s) {
    for (Index i = 0; i < n; ++i) local_up.row(s * n + i) = upstream.block(s, g + i * l, 1, l);
  }
  Vector grad_global, grad_local;
  if (grad_params) {
    grad_global = Vector::Zero(global_.param_count());
    grad_local = Vector::Zero(local_.param_count());
  }
  Batch grad_phi;
  global_.backward(*rec->global, upstream.leftCols(g), grad_phi,
                   grad_params ? &grad_global : nullptr);
  Batch grad_in;
  local_.backward(*rec->local, local_up, grad_in, grad_params ? &grad_local : nullptr);

  grad_states = Batch::Zero(paths, comp_.state_dim());
  grad_states.leftCols(g) = grad_phi;
  for (Index s = 0; s < paths; ++s) {
    for (Index i = 0; i < n; ++i) {
      const Index r = s * n + i;
      grad_states.block(s, g + i * l, 1, l) += grad_in.block(r, 0, 1, l);
      grad_states.block(s, 0, 1, g) += grad_in.block(r, l, 1, g);
    }
  }
  if (grad_params) {
    grad_params->head(global_.param_count()) += grad_global;
    grad_params->tail(local_.param_count()) += grad_local;
  }
}

}  // namespace nsfs
