#include "nsfs/drift_net.hpp"

#include "nsfs/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace nsfs {

namespace {

constexpr char kMagic[8] = {'N', 'S', 'F', 'S', 'D', 'R', 'F', '1'};
constexpr std::uint32_t kVersion = 1;

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class NetTape final : public DriftTape {
 public:
  Batch inputs;
  std::vector<Batch> normalized;   // per hidden layer, pre-softplus
  std::vector<Batch> activations;  // per hidden layer, post-softplus
  std::vector<Vector> inv_std;     // per hidden layer (empty when no normalization)
  std::vector<bool> batch_stats;
};

// Files are little-endian; this build only targets little-endian hosts.
static_assert(std::endian::native == std::endian::little);

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return v;
}

void write_doubles(std::ostream& out, const double* p, Index n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& in, double* p, Index n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("checkpoint truncated");
}

}  // namespace

DriftNet::DriftNet(Index state_dim, Index width, std::uint64_t seed)
    : DriftNet(DriftNetShape{state_dim, state_dim, width, 4, true}, seed) {}

DriftNet::DriftNet(const DriftNetShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape_.input_dim < 1 || shape_.output_dim < 1 || shape_.width < 1 ||
      shape_.hidden_layers < 1) {
    throw std::invalid_argument("DriftNet: dimensions must be positive");
  }
  layout();
  CounterRng rng(seed, Stream::weight_init);
  for (Index l = 0; l < shape_.hidden_layers; ++l) {
    auto w = weight(l);
    auto b = bias(l);
    const double bound = std::sqrt(1.0 / static_cast<double>(w.cols()));
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    for (Index i = 0; i < b.size(); ++i) b(i) = bound * (2.0 * rng.uniform() - 1.0);
  }
  weight(shape_.hidden_layers).setZero();
  bias(shape_.hidden_layers).setZero();
}

void DriftNet::layout() {
  const Index in = shape_.input_dim + 1;
  const Index w = shape_.width;
  Index offset = 0;
  weight_offset_.clear();
  bias_offset_.clear();
  for (Index l = 0; l <= shape_.hidden_layers; ++l) {
    const Index fan_in = l == 0 ? in : w;
    const Index fan_out = l == shape_.hidden_layers ? shape_.output_dim : w;
    weight_offset_.push_back(offset);
    offset += fan_in * fan_out;
    bias_offset_.push_back(offset);
    offset += fan_out;
  }
  params_ = Vector::Zero(offset);
  running_mean_.assign(static_cast<std::size_t>(shape_.hidden_layers), Vector::Zero(w));
  running_var_.assign(static_cast<std::size_t>(shape_.hidden_layers), Vector::Ones(w));
}

Eigen::Map<Batch> DriftNet::weight(Index layer) {
  const Index fan_in = layer == 0 ? shape_.input_dim + 1 : shape_.width;
  const Index fan_out = layer == shape_.hidden_layers ? shape_.output_dim : shape_.width;
  return {params_.data() + weight_offset_[static_cast<std::size_t>(layer)], fan_out, fan_in};
}

Eigen::Map<const Batch> DriftNet::weight(Index layer) const {
  const Index fan_in = layer == 0 ? shape_.input_dim + 1 : shape_.width;
  const Index fan_out = layer == shape_.hidden_layers ? shape_.output_dim : shape_.width;
  return {params_.data() + weight_offset_[static_cast<std::size_t>(layer)], fan_out, fan_in};
}

Eigen::Map<Vector> DriftNet::bias(Index layer) {
  const Index fan_out = layer == shape_.hidden_layers ? shape_.output_dim : shape_.width;
  return {params_.data() + bias_offset_[static_cast<std::size_t>(layer)], fan_out};
}

Eigen::Map<const Vector> DriftNet::bias(Index layer) const {
  const Index fan_out = layer == shape_.hidden_layers ? shape_.output_dim : shape_.width;
  return {params_.data() + bias_offset_[static_cast<std::size_t>(layer)], fan_out};
}

DriftNet::Norm DriftNet::norm_for_mode() const {
  if (!shape_.batch_norm) return Norm::none;
  return mode_ == NetMode::train ? Norm::batch : Norm::running;
}

Batch DriftNet::forward(double t, const Batch& states, std::unique_ptr<DriftTape>* tape) {
  if (states.cols() != shape_.input_dim) {
    throw std::invalid_argument("DriftNet::forward: state dimension mismatch");
  }
  Batch inputs(states.rows(), shape_.input_dim + 1);
  inputs.leftCols(shape_.input_dim) = states;
  inputs.col(shape_.input_dim).setConstant(t);
  return forward_inputs(inputs, tape);
}

Batch DriftNet::forward_inputs(const Batch& inputs, std::unique_ptr<DriftTape>* tape) {
  const Norm norm = norm_for_mode();
  return run(inputs, norm, norm == Norm::batch, tape);
}

Batch DriftNet::forward_batch_stats(double t, const Batch& states) const {
  if (states.cols() != shape_.input_dim) {
    throw std::invalid_argument("DriftNet::forward_batch_stats: state dimension mismatch");
  }
  Batch inputs(states.rows(), shape_.input_dim + 1);
  inputs.leftCols(shape_.input_dim) = states;
  inputs.col(shape_.input_dim).setConstant(t);
  // run() only mutates running statistics when asked to.
  return const_cast<DriftNet*>(this)->run(inputs, shape_.batch_norm ? Norm::batch : Norm::none,
                                          false, nullptr);
}

Batch DriftNet::sample_forward(double t, const Batch& states, bool batch_statistics) {
  if (batch_statistics) return forward_batch_stats(t, states);
  if (states.cols() != shape_.input_dim) {
    throw std::invalid_argument("DriftNet::sample_forward: state dimension mismatch");
  }
  Batch inputs(states.rows(), shape_.input_dim + 1);
  inputs.leftCols(shape_.input_dim) = states;
  inputs.col(shape_.input_dim).setConstant(t);
  return run(inputs, shape_.batch_norm ? Norm::running : Norm::none, false, nullptr);
}

Batch DriftNet::run(const Batch& inputs, Norm norm, bool update_running,
                    std::unique_ptr<DriftTape>* tape) {
  if (inputs.cols() != shape_.input_dim + 1) {
    throw std::invalid_argument("DriftNet: input width mismatch");
  }
  const Index rows = inputs.rows();
  if (norm == Norm::batch && rows < 2) {
    throw std::invalid_argument("DriftNet: batch statistics need at least 2 rows");
  }
  std::unique_ptr<NetTape> rec;
  if (tape) {
    rec = std::make_unique<NetTape>();
    rec->inputs = inputs;
  }

  Batch h = inputs;
  for (Index l = 0; l < shape_.hidden_layers; ++l) {
    Batch z = h * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    Vector inv_std;
    if (norm == Norm::batch) {
      const Eigen::RowVectorXd mean = z.colwise().mean();
      z.rowwise() -= mean;
      const Eigen::RowVectorXd var = z.array().square().colwise().sum() / static_cast<double>(rows);
      inv_std = (var.array() + kBatchNormEps).rsqrt().transpose();
      z.array().rowwise() *= inv_std.transpose().array();
      if (update_running) {
        auto& rm = running_mean_[static_cast<std::size_t>(l)];
        auto& rv = running_var_[static_cast<std::size_t>(l)];
        const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
        rm = (1.0 - kMomentum) * rm + kMomentum * mean.transpose();
        rv = (1.0 - kMomentum) * rv + kMomentum * unbias * var.transpose();
      }
    } else if (norm == Norm::running) {
      const auto& rm = running_mean_[static_cast<std::size_t>(l)];
      const auto& rv = running_var_[static_cast<std::size_t>(l)];
      inv_std = (rv.array() + kBatchNormEps).rsqrt();
      z.rowwise() -= rm.transpose();
      z.array().rowwise() *= inv_std.transpose().array();
    }
    Batch a = z.unaryExpr([](double v) { return softplus(v); });
    if (rec) {
      rec->normalized.push_back(std::move(z));
      rec->inv_std.push_back(std::move(inv_std));
      rec->batch_stats.push_back(norm == Norm::batch);
      rec->activations.push_back(a);
    }
    h = std::move(a);
  }
  Batch out = h * weight(shape_.hidden_layers).transpose();
  out.rowwise() += bias(shape_.hidden_layers).transpose();
  if (tape) *tape = std::move(rec);
  return out;
}

void DriftNet::backward(const DriftTape& tape, const Batch& upstream, Batch& grad_states,
                        Vector* grad_params) const {
  Batch grad_inputs;
  backward_inputs(tape, upstream, grad_inputs, grad_params);
  grad_states = grad_inputs.leftCols(shape_.input_dim);
}

void DriftNet::backward_inputs(const DriftTape& tape, const Batch& upstream, Batch& grad_inputs,
                               Vector* grad_params) const {
  const auto* rec = dynamic_cast<const NetTape*>(&tape);
  if (!rec) throw StateError("DriftNet::backward: no recorded forward tape");
  const Index rows = rec->inputs.rows();
  if (upstream.rows() != rows || upstream.cols() != shape_.output_dim) {
    throw std::invalid_argument("DriftNet::backward: upstream shape mismatch");
  }
  if (grad_params && grad_params->size() != params_.size()) {
    throw std::invalid_argument("DriftNet::backward: gradient buffer size mismatch");
  }
  auto param_grad_weight = [&](Index layer) {
    const auto w = weight(layer);
    return Eigen::Map<Batch>(grad_params->data() + weight_offset_[static_cast<std::size_t>(layer)],
                             w.rows(), w.cols());
  };
  auto param_grad_bias = [&](Index layer) {
    return Eigen::Map<Vector>(grad_params->data() + bias_offset_[static_cast<std::size_t>(layer)],
                              bias(layer).size());
  };

  const Index last = shape_.hidden_layers;
  const Batch& top = rec->activations.back();
  if (grad_params) {
    param_grad_weight(last).noalias() += upstream.transpose() * top;
    param_grad_bias(last) += upstream.colwise().sum().transpose();
  }
  Batch grad = upstream * weight(last);

  for (Index l = last - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Batch& zhat = rec->normalized[li];
    Batch dz = grad.array() * zhat.unaryExpr([](double v) { return sigmoid(v); }).array();
    if (rec->batch_stats[li]) {
      const double n = static_cast<double>(rows);
      const Eigen::RowVectorXd mean_dz = dz.colwise().sum() / n;
      const Eigen::RowVectorXd mean_dz_zhat = (dz.array() * zhat.array()).colwise().sum() / n;
      dz.rowwise() -= mean_dz;
      dz.array() -= zhat.array().rowwise() * mean_dz_zhat.array();
      dz.array().rowwise() *= rec->inv_std[li].transpose().array();
    } else if (rec->inv_std[li].size() > 0) {
      dz.array().rowwise() *= rec->inv_std[li].transpose().array();
    }
    const Batch& below = l == 0 ? rec->inputs : rec->activations[li - 1];
    if (grad_params) {
      param_grad_weight(l).noalias() += dz.transpose() * below;
      param_grad_bias(l) += dz.colwise().sum().transpose();
    }
    grad = dz * weight(l);
  }
  grad_inputs = std::move(grad);
}

void DriftNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(shape_.input_dim));
  write_pod(out, static_cast<std::uint32_t>(shape_.output_dim));
  write_pod(out, static_cast<std::uint32_t>(shape_.width));
  write_pod(out, static_cast<std::uint32_t>(shape_.hidden_layers));
  write_pod(out, static_cast<std::uint32_t>(shape_.batch_norm ? 1 : 0));
  for (Index l = 0; l < shape_.hidden_layers; ++l) {
    write_doubles(out, running_mean(l).data(), shape_.width);
    write_doubles(out, running_var(l).data(), shape_.width);
  }
  write_pod(out, static_cast<std::uint64_t>(params_.size()));
  write_doubles(out, params_.data(), params_.size());
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

DriftNet DriftNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a drift checkpoint: " + path.string());
  }
  if (read_pod<std::uint32_t>(in) != kVersion) throw IoError("unsupported checkpoint version");
  DriftNetShape shape;
  shape.input_dim = read_pod<std::uint32_t>(in);
  shape.output_dim = read_pod<std::uint32_t>(in);
  shape.width = read_pod<std::uint32_t>(in);
  shape.hidden_layers = read_pod<std::uint32_t>(in);
  shape.batch_norm = read_pod<std::uint32_t>(in) != 0;
  DriftNet net(shape, 0);
  for (Index l = 0; l < shape.hidden_layers; ++l) {
    read_doubles(in, net.running_mean(l).data(), shape.width);
    read_doubles(in, net.running_var(l).data(), shape.width);
  }
  const auto count = read_pod<std::uint64_t>(in);
  if (static_cast<Index>(count) != net.params_.size()) {
    throw IoError("checkpoint weight count does not match its header");
  }
  read_doubles(in, net.params_.data(), net.params_.size());
  return net;
}

}  // namespace nsfs
