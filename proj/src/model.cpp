#include "nsfs/model.hpp"

#include <numeric>

namespace nsfs {

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    if (i < 0 || i >= size()) throw std::out_of_range("Dataset::subset: row index out of range");
    out.features.row(static_cast<Index>(r)) = features.row(i);
    out.targets(static_cast<Index>(r)) = targets(i);
  }
  return out;
}

double BayesModel::log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                               std::span<const Index> rows, double scale, Vector* grad) const {
  double total = 0.0;
  Vector g;
  if (grad) g = Vector::Zero(dim());
  for (Index i : rows) total += log_lik(theta, data, i, grad ? &g : nullptr);
  if (grad) *grad += scale * g;
  return scale * total;
}

double BayesModel::predict(const Eigen::Ref<const Vector>&, const Dataset&, Index) const {
  throw std::logic_error("model does not define predictions");
}

double BayesModel::noise_sd() const {
  throw std::logic_error("model has no observation noise");
}

Vector BayesModel::sample_prior(CounterRng&) const {
  throw std::logic_error("model does not support prior sampling");
}

double BayesModel::log_lik_all(const Eigen::Ref<const Vector>& theta, Vector* grad) const {
  const auto rows = all_rows();
  return log_lik_sum(theta, data(), rows, 1.0, grad);
}

std::vector<Index> BayesModel::all_rows() const {
  std::vector<Index> rows(static_cast<std::size_t>(data().size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

}  // namespace nsfs
