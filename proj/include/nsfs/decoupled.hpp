#pragma once

#include "nsfs/drift_net.hpp"

namespace nsfs {

/// State layout (Phi, theta_1, ..., theta_N) with Phi of size global_dim and each
/// theta_i of size local_dim. `data` holds the datum x_i fed to the local network.
struct DriftComposition {
  Index global_dim = 1;
  Index local_dim = 1;
  Batch data;  // N x m

  Index locals() const { return data.rows(); }
  Index state_dim() const { return global_dim + locals() * local_dim; }
};

/// [u]_Phi = g(t, Phi) and [u]_{theta_i} = h(t, theta_i, Phi, x_i) with h shared across i.
///
/// The flat weight vector is the global network's weights followed by the local network's.
class DecoupledDrift final : public ControlledDrift {
 public:
  DecoupledDrift(DriftComposition comp, Index width, Index hidden_layers, bool batch_norm,
                 std::uint64_t seed);

  const DriftComposition& composition() const { return comp_; }
  Index state_dim() const override { return comp_.state_dim(); }
  Index param_count() const override { return params_.size(); }
  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }

  void set_mode(NetMode mode);

  Batch forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) override;
  void backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                Vector* grad_params) const override;

  Batch sample_forward(double t, const Batch& states, bool batch_statistics) override;

  /// Local network inputs for every (path, datum): row s * N + i is (theta_i, Phi, x_i).
  Batch local_inputs(const Batch& states) const;

 private:
  void sync();
  Batch assemble(const Batch& global_out, const Batch& local_out, Index paths) const;

  DriftComposition comp_;
  DriftNet global_;
  DriftNet local_;
  Vector params_;
};

}  // namespace nsfs
