#pragma once

#include "nsfs/drift.hpp"
#include "nsfs/types.hpp"

#include <filesystem>
#include <vector>

namespace nsfs {

enum class NetMode {
  train,  // batch statistics; running statistics updated
  eval,   // running statistics; no state mutation
};

struct DriftNetShape {
  Index input_dim = 1;   // state features, excluding the time column
  Index output_dim = 1;
  Index width = 20;
  Index hidden_layers = 4;
  bool batch_norm = true;
};

/// Feed-forward drift u(t, x): `hidden_layers` blocks of
/// affine -> batch-norm (no affine) -> softplus, then one affine output layer.
/// The network input is the row (x, t). The output layer starts at exactly zero.
///
/// Weights live in one flat vector, layer by layer: W (row-major, out x in) then b.
class DriftNet final : public ControlledDrift {
 public:
  static constexpr double kBatchNormEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  /// Drift on R^d: input (theta, t), output in R^d.
  DriftNet(Index state_dim, Index width, std::uint64_t seed);
  DriftNet(const DriftNetShape& shape, std::uint64_t seed);

  const DriftNetShape& shape() const { return shape_; }
  NetMode mode() const { return mode_; }
  void set_mode(NetMode mode) { mode_ = mode; }

  Index state_dim() const override { return shape_.input_dim; }
  Index param_count() const override { return params_.size(); }
  Vector& params() override { return params_; }
  const Vector& params() const override { return params_; }

  Batch forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) override;
  void backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                Vector* grad_params) const override;

  /// Forward on rows that already carry the time column as their last entry.
  Batch forward_inputs(const Batch& inputs, std::unique_ptr<DriftTape>* tape);
  /// Like backward() but returns the gradient for the full input rows, time included.
  void backward_inputs(const DriftTape& tape, const Batch& upstream, Batch& grad_inputs,
                       Vector* grad_params) const;

  /// Forward with batch statistics and no running-statistic update.
  Batch forward_batch_stats(double t, const Batch& states) const;
  /// Batch statistics or stored running statistics; never mutates.
  Batch sample_forward(double t, const Batch& states, bool batch_statistics) override;

  Index layer_count() const { return shape_.hidden_layers; }
  const Vector& running_mean(Index layer) const { return running_mean_[static_cast<std::size_t>(layer)]; }
  const Vector& running_var(Index layer) const { return running_var_[static_cast<std::size_t>(layer)]; }
  Vector& running_mean(Index layer) { return running_mean_[static_cast<std::size_t>(layer)]; }
  Vector& running_var(Index layer) { return running_var_[static_cast<std::size_t>(layer)]; }

  /// Views into the flat weight vector; layer == layer_count() is the output layer.
  Eigen::Map<Batch> weight(Index layer);
  Eigen::Map<const Batch> weight(Index layer) const;
  Eigen::Map<Vector> bias(Index layer);
  Eigen::Map<const Vector> bias(Index layer) const;

  void save(const std::filesystem::path& path) const;
  static DriftNet load(const std::filesystem::path& path);

 private:
  enum class Norm { batch, running, none };

  Batch run(const Batch& inputs, Norm norm, bool update_running, std::unique_ptr<DriftTape>* tape);
  Norm norm_for_mode() const;
  void layout();

  DriftNetShape shape_;
  NetMode mode_ = NetMode::train;
  Vector params_;
  std::vector<Index> weight_offset_;
  std::vector<Index> bias_offset_;
  std::vector<Vector> running_mean_;
  std::vector<Vector> running_var_;
};

}  // namespace nsfs
