#include "nsfs/sgld.hpp"

#include "nsfs/rng.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace nsfs {

namespace {

Vector log_joint_gradient(const BayesModel& model, const Vector& theta,
                          const std::vector<Index>& rows, Index iteration) {
  const double scale =
      static_cast<double>(model.data().size()) / static_cast<double>(rows.size());
  Vector g = Vector::Zero(model.dim());
  model.log_prior(theta, &g);
  model.log_lik_sum(theta, model.data(), rows, scale, &g);
  if (!g.allFinite()) {
    throw NumericError("non-finite log-joint gradient at iteration " + std::to_string(iteration));
  }
  return g;
}

void check_batch(const BayesModel& model, Index batch_size) {
  if (batch_size < 1 || batch_size > model.data().size()) {
    throw std::invalid_argument("batch size must lie in [1, N]");
  }
}

Vector starting_point(const BayesModel& model, const std::optional<Vector>& init, bool from_prior,
                      std::uint64_t seed) {
  if (init) {
    if (init->size() != model.dim()) throw std::invalid_argument("initial point has wrong size");
    return *init;
  }
  if (!from_prior) return Vector::Zero(model.dim());
  CounterRng rng(seed, Stream::chain_init);
  return model.sample_prior(rng);
}

}  // namespace

double SgldSchedule::operator()(Index i) const {
  return a / std::pow(static_cast<double>(i) + b, exponent);
}

void SgldSchedule::validate() const {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("SGLD schedule needs a > 0 and b > 0");
  if (!(exponent > 0.5 && exponent <= 1.0)) {
    throw std::invalid_argument("SGLD schedule exponent must lie in (0.5, 1]");
  }
}

double StepSchedule::operator()(Index i) const {
  if (exponent == 0.0) return a;
  return a / std::pow(static_cast<double>(i) + b, exponent);
}

std::vector<Index> draw_batch(Index n, Index batch_size, std::uint64_t seed, Index iteration) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (batch_size >= n) return idx;
  CounterRng rng(seed, Stream::data_batch, static_cast<std::uint32_t>(iteration),
                 static_cast<std::uint32_t>(static_cast<std::uint64_t>(iteration) >> 32));
  // Partial Fisher-Yates: the first B slots become a uniform draw without replacement.
  for (Index a = 0; a < batch_size; ++a) {
    const auto b = a + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - a)));
    std::swap(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  }
  idx.resize(static_cast<std::size_t>(batch_size));
  return idx;
}

std::vector<Index> sgld_kept_iterations(const SgldOptions& o) {
  const Index m = o.iterations;
  const Index n = o.samples;
  if (n < 1) throw std::invalid_argument("SGLD: posterior sample count must be >= 1");
  std::vector<Index> kept;
  if (o.burn_in < 0) {
    const Index span = std::max(n, (m + 2) / 3);
    if (span > m) throw std::invalid_argument("SGLD: fewer iterations than requested samples");
    for (Index j = 0; j < n; ++j) kept.push_back(m - span + (j * span) / n);
    return kept;
  }
  if (o.burn_in > m) throw std::invalid_argument("SGLD: burn-in exceeds iteration count");
  if (o.thin < 1) throw std::invalid_argument("SGLD: thinning interval must be >= 1");
  for (Index i = o.burn_in; i < m; i += o.thin) kept.push_back(i);
  if (static_cast<Index>(kept.size()) < n) {
    throw std::invalid_argument("SGLD: burn-in and thinning leave fewer iterates than samples");
  }
  kept.erase(kept.begin(), kept.end() - n);
  return kept;
}

SampleSet sgld_run(const BayesModel& model, const SgldSchedule& schedule,
                   const SgldOptions& options) {
  schedule.validate();
  check_batch(model, options.batch_size);
  const auto kept = sgld_kept_iterations(options);
  const auto start = std::chrono::steady_clock::now();

  SampleSet out;
  out.samples.resize(static_cast<Index>(kept.size()), model.dim());
  out.meta.method = "sgld";
  out.meta.seed = options.seed;
  out.meta.iterations = options.iterations;

  Vector theta = starting_point(model, options.init, options.init_from_prior, options.seed);
  Vector noise(model.dim());
  std::size_t next = 0;
  for (Index i = 0; i < options.iterations; ++i) {
    const auto rows = draw_batch(model.data().size(), options.batch_size, options.seed, i);
    const Vector g = log_joint_gradient(model, theta, rows, i);
    const double lambda = schedule(i);
    theta += (lambda / 2.0) * g;
    if (options.inject_noise) {
      CounterRng rng(options.seed, Stream::sgld_noise, static_cast<std::uint32_t>(i),
                     static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32));
      rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
      theta += std::sqrt(lambda) * noise;
    }
    if (next < kept.size() && kept[next] == i) {
      out.samples.row(static_cast<Index>(next)) = theta.transpose();
      ++next;
    }
  }
  out.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

Vector sgd_run(const BayesModel& model, const StepSchedule& step, const SgdOptions& options) {
  check_batch(model, options.batch_size);
  if (options.iterations < 0) throw std::invalid_argument("SGD: negative iteration count");
  Vector theta = starting_point(model, options.init, options.init_from_prior, options.seed);
  for (Index i = 0; i < options.iterations; ++i) {
    const auto rows = draw_batch(model.data().size(), options.batch_size, options.seed, i);
    const Vector g = log_joint_gradient(model, theta, rows, i);
    theta += step(i) * g;
  }
  return theta;
}

}  // namespace nsfs
