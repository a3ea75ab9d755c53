#pragma once

#include "nsfs/model.hpp"

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>

namespace nsfs {

/// theta ~ N(m0, v0), y_i | theta ~ N(theta, s2). One-dimensional.
class ConjugateGaussianModel final : public BayesModel {
 public:
  ConjugateGaussianModel(double prior_mean, double prior_var, double noise_var, Vector observations);

  Index dim() const override { return 1; }
  Task task() const override { return Task::regression; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const override;
  double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                 Vector* grad) const override;
  double predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                 Index i) const override;
  double noise_sd() const override { return std::sqrt(noise_var_); }
  Vector sample_prior(CounterRng& rng) const override;

  double prior_mean() const { return prior_mean_; }
  double prior_var() const { return prior_var_; }
  double noise_var() const { return noise_var_; }
  double posterior_mean() const { return post_mean_; }
  double posterior_var() const { return post_var_; }
  /// Closed-form ln Z.
  double log_evidence() const;

 private:
  double prior_mean_, prior_var_, noise_var_;
  double post_mean_, post_var_;
  Dataset data_;
};

/// Draws n observations y_i ~ N(theta_true, noise_var).
Vector sample_gaussian_observations(double theta_true, double noise_var, Index n,
                                    std::uint64_t seed);

/// Fully connected ReLU regression network f_theta with Gaussian prior on the
/// flattened weights and Gaussian observation noise. Features are the network inputs.
class BnnRegressionModel final : public BayesModel {
 public:
  BnnRegressionModel(std::vector<Index> widths, double prior_sd, double noise_sd, Dataset data);

  Index dim() const override { return dim_; }
  Task task() const override { return Task::regression; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const override;
  double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                 Vector* grad) const override;
  double log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                     std::span<const Index> rows, double scale, Vector* grad) const override;
  double predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                 Index i) const override;
  double noise_sd() const override { return noise_sd_; }
  Vector sample_prior(CounterRng& rng) const override;

  /// Network outputs for every row of `inputs`.
  Vector network(const Eigen::Ref<const Vector>& theta, const Batch& inputs) const;
  const std::vector<Index>& widths() const { return widths_; }

 private:
  std::vector<Index> widths_;
  std::vector<Index> offsets_;
  Index dim_ = 0;
  double prior_sd_, noise_sd_;
  Dataset data_;
};

/// Bernoulli likelihood with logistic link, bias feature appended, and an
/// i.i.d. Laplace(0, b) prior. Labels must be -1 or +1.
class LogisticRegressionModel final : public BayesModel {
 public:
  LogisticRegressionModel(double prior_scale, Dataset data);

  Index dim() const override { return data_.feature_dim() + 1; }
  Task task() const override { return Task::binary_classification; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const override;
  double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                 Vector* grad) const override;
  double log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                     std::span<const Index> rows, double scale, Vector* grad) const override;
  double predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                 Index i) const override;
  Vector sample_prior(CounterRng& rng) const override;

 private:
  double prior_scale_;
  Dataset data_;
};

/// Bayesian ICA: theta is a row-major d x d unmixing matrix W with an
/// N(0, sd^2 I) prior and ln p(x | W) = ln|det W| + sum_i ln[1 / (4 cosh^2(w_i^T x / 2))].
/// The ln|det W| term can be switched off.
class IcaModel final : public BayesModel {
 public:
  IcaModel(Index sources, Dataset data, double prior_sd = 1.0, bool include_log_det = true);

  Index dim() const override { return sources_ * sources_; }
  Task task() const override { return Task::density; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const override;
  double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                 Vector* grad) const override;
  double log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                     std::span<const Index> rows, double scale, Vector* grad) const override;
  Vector sample_prior(CounterRng& rng) const override;

 private:
  Index sources_;
  Dataset data_;
  double prior_sd_;
  bool include_log_det_;
};

/// Phi ~ N(0, 1), theta_i | Phi ~ N(Phi, 1), x_i | theta_i ~ N(theta_i, sigma^2).
/// State layout: (Phi, theta_1, ..., theta_N).
class HierarchicalGaussianModel final : public BayesModel {
 public:
  HierarchicalGaussianModel(double sigma, Vector observations);

  Index dim() const override { return data_.size() + 1; }
  Task task() const override { return Task::regression; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const override;
  double log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                 Vector* grad) const override;
  double noise_sd() const override { return sigma_; }
  Vector sample_prior(CounterRng& rng) const override;

  /// Prior covariance of (Phi, theta_1..N).
  Matrix prior_covariance() const;
  const Vector& posterior_mean() const { return post_mean_; }
  const Matrix& posterior_cov() const { return post_cov_; }
  double posterior_correlation(Index a, Index b) const;

 private:
  double sigma_;
  Dataset data_;
  Vector post_mean_;
  Matrix post_cov_;
};

Vector sample_hierarchical_observations(Index n, double sigma, std::uint64_t seed);

struct StepData {
  Dataset train;
  Dataset test;
};

/// y = 1{x >= 0} + eps, eps ~ N(0, 0.1^2); 100 training x ~ U(-3.5, 3.5),
/// 100 test x ~ U(-10, 10).
StepData make_step_dataset(std::uint64_t seed);

/// Independent unit-Laplace sources mixed by a random well-conditioned matrix.
Dataset make_ica_synthetic(Index sources, Index n, std::uint64_t seed);

struct SparseRow {
  double label = 0.0;
  std::vector<std::pair<Index, double>> entries;  // 1-based indices, strictly increasing
};

/// Parses "label idx:value idx:value ...". `line_no` is used in error messages.
SparseRow parse_sparse_line(const std::string& line, std::size_t line_no);

/// Loads a sparse index:value text file into dense rows with `n_features` columns.
Dataset load_sparse_dataset(const std::filesystem::path& path, Index n_features);

/// Loads a dense CSV (optional header) whose last column is the target.
Dataset load_csv_dataset(const std::filesystem::path& path);

}  // namespace nsfs
