#include "nsfs/models.hpp"

#include "nsfs/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace nsfs {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double log_normal(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + r * r / var);
}

// Stable ln(1 + exp(x)).
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ln(2 cosh(y)), stable for large |y|.
double log_two_cosh(double y) {
  const double a = std::abs(y);
  return a + std::log1p(std::exp(-2.0 * a));
}

void check_row(const Dataset& data, Index i) {
  if (i < 0 || i >= data.size()) throw std::out_of_range("datum index out of range");
}

}  // namespace

// --- conjugate Gaussian --------------------------------------------------------------------

ConjugateGaussianModel::ConjugateGaussianModel(double prior_mean, double prior_var,
                                               double noise_var, Vector observations)
    : prior_mean_(prior_mean), prior_var_(prior_var), noise_var_(noise_var) {
  if (!(prior_var > 0.0) || !(noise_var > 0.0)) {
    throw std::invalid_argument("ConjugateGaussianModel: variances must be positive");
  }
  data_.features.resize(observations.size(), 0);
  data_.targets = std::move(observations);
  const double n = static_cast<double>(data_.size());
  post_var_ = 1.0 / (1.0 / prior_var_ + n / noise_var_);
  post_mean_ = post_var_ * (prior_mean_ / prior_var_ + data_.targets.sum() / noise_var_);
}

double ConjugateGaussianModel::log_prior(const Eigen::Ref<const Vector>& theta,
                                         Vector* grad) const {
  if (grad) (*grad)(0) += -(theta(0) - prior_mean_) / prior_var_;
  return log_normal(theta(0), prior_mean_, prior_var_);
}

double ConjugateGaussianModel::log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                       Index i, Vector* grad) const {
  check_row(data, i);
  const double y = data.targets(i);
  if (grad) (*grad)(0) += (y - theta(0)) / noise_var_;
  return log_normal(y, theta(0), noise_var_);
}

double ConjugateGaussianModel::predict(const Eigen::Ref<const Vector>& theta, const Dataset&,
                                       Index) const {
  return theta(0);
}

Vector ConjugateGaussianModel::sample_prior(CounterRng& rng) const {
  return Vector::Constant(1, prior_mean_ + std::sqrt(prior_var_) * rng.normal());
}

double ConjugateGaussianModel::log_evidence() const {
  // ln Z = ln p(y) for y ~ N(m0 1, s2 I + v0 1 1^T).
  const Index n = data_.size();
  Matrix cov = Matrix::Constant(n, n, prior_var_);
  cov.diagonal().array() += noise_var_;
  const Vector r = data_.targets.array() - prior_mean_;
  Eigen::LLT<Matrix> llt(cov);
  const Matrix l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(n) * kLogTwoPi + log_det + r.dot(llt.solve(r)));
}

Vector sample_gaussian_observations(double theta_true, double noise_var, Index n,
                                    std::uint64_t seed) {
  CounterRng rng(seed, Stream::dataset);
  Vector y(n);
  const double sd = std::sqrt(noise_var);
  for (Index i = 0; i < n; ++i) y(i) = theta_true + sd * rng.normal();
  return y;
}

// --- Bayesian neural network regression ------------------------------------------------------

BnnRegressionModel::BnnRegressionModel(std::vector<Index> widths, double prior_sd,
                                       double noise_sd, Dataset data)
    : widths_(std::move(widths)), prior_sd_(prior_sd), noise_sd_(noise_sd), data_(std::move(data)) {
  if (widths_.size() < 2) throw std::invalid_argument("BnnRegressionModel: need >= 2 widths");
  if (!(prior_sd > 0.0) || !(noise_sd > 0.0)) {
    throw std::invalid_argument("BnnRegressionModel: scales must be positive");
  }
  if (data_.feature_dim() != widths_.front() && data_.size() > 0) {
    throw std::invalid_argument("BnnRegressionModel: feature width does not match input layer");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(dim_);
    dim_ += widths_[l + 1] * widths_[l] + widths_[l + 1];
  }
}

double BnnRegressionModel::log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const {
  const double var = prior_sd_ * prior_sd_;
  if (grad) *grad -= theta / var;
  return -0.5 * theta.squaredNorm() / var - 0.5 * static_cast<double>(dim_) * (kLogTwoPi + std::log(var));
}

Vector BnnRegressionModel::sample_prior(CounterRng& rng) const {
  Vector theta(dim_);
  for (Index i = 0; i < dim_; ++i) theta(i) = prior_sd_ * rng.normal();
  return theta;
}

Vector BnnRegressionModel::network(const Eigen::Ref<const Vector>& theta, const Batch& inputs) const {
  Batch h = inputs;
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const Index in = widths_[l];
    const Index out = widths_[l + 1];
    Eigen::Map<const Batch> w(theta.data() + offsets_[l], out, in);
    Eigen::Map<const Vector> b(theta.data() + offsets_[l] + out * in, out);
    Batch z = h * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h.col(0);
}

double BnnRegressionModel::log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                   Index i, Vector* grad) const {
  const Index row = i;
  return log_lik_sum(theta, data, std::span<const Index>(&row, 1), 1.0, grad);
}

double BnnRegressionModel::log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                       std::span<const Index> rows, double scale,
                                       Vector* grad) const {
  if (theta.size() != dim_) throw std::invalid_argument("BnnRegressionModel: theta size mismatch");
  const Index n = static_cast<Index>(rows.size());
  Batch x(n, widths_.front());
  Vector y(n);
  for (Index r = 0; r < n; ++r) {
    check_row(data, rows[static_cast<std::size_t>(r)]);
    x.row(r) = data.features.row(rows[static_cast<std::size_t>(r)]);
    y(r) = data.targets(rows[static_cast<std::size_t>(r)]);
  }
  const std::size_t layers = widths_.size() - 1;
  std::vector<Batch> acts{x};
  for (std::size_t l = 0; l < layers; ++l) {
    const Index in = widths_[l];
    const Index out = widths_[l + 1];
    Eigen::Map<const Batch> w(theta.data() + offsets_[l], out, in);
    Eigen::Map<const Vector> b(theta.data() + offsets_[l] + out * in, out);
    Batch z = acts.back() * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  const double var = noise_sd_ * noise_sd_;
  const Vector resid = y - acts.back().col(0);
  const double ll = -0.5 * resid.squaredNorm() / var -
                    0.5 * static_cast<double>(n) * (kLogTwoPi + std::log(var));
  if (grad) {
    Batch g = (scale / var) * resid;  // d(scaled ll) / d f
    for (std::size_t l = layers; l-- > 0;) {
      const Index in = widths_[l];
      const Index out = widths_[l + 1];
      Eigen::Map<Batch> gw(grad->data() + offsets_[l], out, in);
      Eigen::Map<Vector> gb(grad->data() + offsets_[l] + out * in, out);
      gw.noalias() += g.transpose() * acts[l];
      gb += g.colwise().sum().transpose();
      if (l > 0) {
        Eigen::Map<const Batch> w(theta.data() + offsets_[l], out, in);
        Batch below = g * w;
        below.array() *= (acts[l].array() > 0.0).cast<double>();
        g = std::move(below);
      }
    }
  }
  return scale * ll;
}

double BnnRegressionModel::predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                   Index i) const {
  check_row(data, i);
  return network(theta, data.features.row(i))(0);
}

// --- logistic regression -------------------------------------------------------------------

LogisticRegressionModel::LogisticRegressionModel(double prior_scale, Dataset data)
    : prior_scale_(prior_scale), data_(std::move(data)) {
  if (!(prior_scale > 0.0)) throw std::invalid_argument("LogisticRegressionModel: scale must be > 0");
  for (Index i = 0; i < data_.size(); ++i) {
    if (data_.targets(i) != 1.0 && data_.targets(i) != -1.0) {
      throw std::invalid_argument("LogisticRegressionModel: labels must be -1 or +1");
    }
  }
}

double LogisticRegressionModel::log_prior(const Eigen::Ref<const Vector>& theta,
                                          Vector* grad) const {
  const double b = prior_scale_;
  if (grad) {
    // Subgradient 0 at the kink.
    for (Index j = 0; j < theta.size(); ++j) {
      if (theta(j) > 0.0) (*grad)(j) -= 1.0 / b;
      else if (theta(j) < 0.0) (*grad)(j) += 1.0 / b;
    }
  }
  return -theta.cwiseAbs().sum() / b - static_cast<double>(theta.size()) * std::log(2.0 * b);
}

Vector LogisticRegressionModel::sample_prior(CounterRng& rng) const {
  Vector theta(dim());
  for (Index j = 0; j < theta.size(); ++j) {
    const double u = rng.uniform() - 0.5;
    theta(j) = -(u < 0 ? -1.0 : 1.0) * prior_scale_ * std::log(1.0 - 2.0 * std::abs(u));
  }
  return theta;
}

double LogisticRegressionModel::log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                        Index i, Vector* grad) const {
  check_row(data, i);
  const Index m = data.feature_dim();
  const double y = data.targets(i);
  const double margin = y * (data.features.row(i).dot(theta.head(m)) + theta(m));
  if (grad) {
    const double c = y * sigmoid(-margin);
    grad->head(m) += c * data.features.row(i).transpose();
    (*grad)(m) += c;
  }
  return -softplus(-margin);
}

double LogisticRegressionModel::log_lik_sum(const Eigen::Ref<const Vector>& theta,
                                            const Dataset& data, std::span<const Index> rows,
                                            double scale, Vector* grad) const {
  const Index m = data.feature_dim();
  if (theta.size() != m + 1) throw std::invalid_argument("LogisticRegressionModel: theta size mismatch");
  const bool all = static_cast<Index>(rows.size()) == data.size() &&
                   (rows.empty() || (rows.front() == 0 && rows.back() == data.size() - 1));
  double total = 0.0;
  if (all) {
    // Contiguous full pass: one matrix-vector product.
    const Vector margins = data.targets.cwiseProduct((data.features * theta.head(m)).array().matrix() +
                                                     Vector::Constant(data.size(), theta(m)));
    Vector coef(data.size());
    for (Index i = 0; i < data.size(); ++i) {
      total -= softplus(-margins(i));
      coef(i) = data.targets(i) * sigmoid(-margins(i));
    }
    if (grad) {
      grad->head(m).noalias() += scale * (data.features.transpose() * coef);
      (*grad)(m) += scale * coef.sum();
    }
    return scale * total;
  }
  Vector g;
  if (grad) g = Vector::Zero(m + 1);
  for (Index i : rows) total += log_lik(theta, data, i, grad ? &g : nullptr);
  if (grad) *grad += scale * g;
  return scale * total;
}

double LogisticRegressionModel::predict(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                                        Index i) const {
  check_row(data, i);
  const Index m = data.feature_dim();
  return sigmoid(data.features.row(i).dot(theta.head(m)) + theta(m));
}

// --- ICA -------------------------------------------------------------------------------------

IcaModel::IcaModel(Index sources, Dataset data, double prior_sd, bool include_log_det)
    : sources_(sources), data_(std::move(data)), prior_sd_(prior_sd),
      include_log_det_(include_log_det) {
  if (sources_ < 1) throw std::invalid_argument("IcaModel: need at least one source");
  if (data_.size() > 0 && data_.feature_dim() != sources_) {
    throw std::invalid_argument("IcaModel: data width must equal the source count");
  }
}

double IcaModel::log_prior(const Eigen::Ref<const Vector>& theta, Vector* grad) const {
  const double var = prior_sd_ * prior_sd_;
  if (grad) *grad -= theta / var;
  return -0.5 * theta.squaredNorm() / var -
         0.5 * static_cast<double>(theta.size()) * (kLogTwoPi + std::log(var));
}

Vector IcaModel::sample_prior(CounterRng& rng) const {
  Vector theta(dim());
  for (Index i = 0; i < theta.size(); ++i) theta(i) = prior_sd_ * rng.normal();
  return theta;
}

double IcaModel::log_lik(const Eigen::Ref<const Vector>& theta, const Dataset& data, Index i,
                         Vector* grad) const {
  const Index row = i;
  return log_lik_sum(theta, data, std::span<const Index>(&row, 1), 1.0, grad);
}

double IcaModel::log_lik_sum(const Eigen::Ref<const Vector>& theta, const Dataset& data,
                             std::span<const Index> rows, double scale, Vector* grad) const {
  const Index d = sources_;
  if (theta.size() != d * d) throw std::invalid_argument("IcaModel: theta size mismatch");
  Eigen::Map<const Batch> w(theta.data(), d, d);
  const Index n = static_cast<Index>(rows.size());

  double log_det = 0.0;
  Eigen::PartialPivLU<Matrix> lu;
  if (include_log_det_) {
    lu.compute(Matrix(w));
    const Vector diag = lu.matrixLU().diagonal();
    for (Index k = 0; k < d; ++k) {
      const double a = std::abs(diag(k));
      if (!(a > 1e-300)) throw NumericError("IcaModel: singular unmixing matrix");
      log_det += std::log(a);
    }
  }

  double total = static_cast<double>(n) * log_det;
  Batch gw = Batch::Zero(d, d);
  for (Index r = 0; r < n; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    check_row(data, i);
    const Vector a = w * data.features.row(i).transpose();
    for (Index k = 0; k < d; ++k) {
      total -= 2.0 * log_two_cosh(0.5 * a(k));
      if (grad) gw.row(k) -= std::tanh(0.5 * a(k)) * data.features.row(i);
    }
  }
  if (grad) {
    if (include_log_det_) {
      const Matrix inv_t = lu.inverse().transpose();
      gw += static_cast<double>(n) * inv_t;
    }
    Eigen::Map<Batch> g(grad->data(), d, d);
    g += scale * gw;
  }
  return scale * total;
}

// --- hierarchical Gaussian --------------------------------------------------------------------

HierarchicalGaussianModel::HierarchicalGaussianModel(double sigma, Vector observations)
    : sigma_(sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("HierarchicalGaussianModel: sigma must be > 0");
  if (observations.size() < 1) throw std::invalid_argument("HierarchicalGaussianModel: need data");
  data_.features.resize(observations.size(), 0);
  data_.targets = std::move(observations);
  const Index n = data_.size();
  const double lik_prec = std::isinf(sigma) ? 0.0 : 1.0 / (sigma * sigma);
  Matrix precision = prior_covariance().inverse();
  Vector rhs = Vector::Zero(n + 1);
  for (Index i = 0; i < n; ++i) {
    precision(i + 1, i + 1) += lik_prec;
    rhs(i + 1) = lik_prec * data_.targets(i);
  }
  post_cov_ = precision.inverse();
  post_cov_ = 0.5 * (post_cov_ + post_cov_.transpose());
  post_mean_ = post_cov_ * rhs;
}

Matrix HierarchicalGaussianModel::prior_covariance() const {
  const Index n = data_.size();
  Matrix c = Matrix::Ones(n + 1, n + 1);
  for (Index i = 1; i <= n; ++i) c(i, i) = 2.0;
  return c;
}

double HierarchicalGaussianModel::log_prior(const Eigen::Ref<const Vector>& theta,
                                            Vector* grad) const {
  const double phi = theta(0);
  double lp = log_normal(phi, 0.0, 1.0);
  if (grad) (*grad)(0) -= phi;
  for (Index i = 1; i < theta.size(); ++i) {
    const double r = theta(i) - phi;
    lp += log_normal(theta(i), phi, 1.0);
    if (grad) {
      (*grad)(i) -= r;
      (*grad)(0) += r;
    }
  }
  return lp;
}

Vector HierarchicalGaussianModel::sample_prior(CounterRng& rng) const {
  Vector theta(dim());
  theta(0) = rng.normal();
  for (Index i = 1; i < theta.size(); ++i) theta(i) = theta(0) + rng.normal();
  return theta;
}

double HierarchicalGaussianModel::log_lik(const Eigen::Ref<const Vector>& theta,
                                          const Dataset& data, Index i, Vector* grad) const {
  check_row(data, i);
  const double var = sigma_ * sigma_;
  const double x = data.targets(i);
  if (grad) (*grad)(i + 1) += (x - theta(i + 1)) / var;
  return log_normal(x, theta(i + 1), var);
}

double HierarchicalGaussianModel::posterior_correlation(Index a, Index b) const {
  return post_cov_(a, b) / std::sqrt(post_cov_(a, a) * post_cov_(b, b));
}

Vector sample_hierarchical_observations(Index n, double sigma, std::uint64_t seed) {
  CounterRng rng(seed, Stream::dataset);
  const double phi = rng.normal();
  Vector x(n);
  for (Index i = 0; i < n; ++i) {
    const double theta = phi + rng.normal();
    x(i) = theta + sigma * rng.normal();
  }
  return x;
}

// --- datasets --------------------------------------------------------------------------------

StepData make_step_dataset(std::uint64_t seed) {
  constexpr Index n = 100;
  constexpr double noise_sd = 0.1;
  auto make = [&](std::uint32_t split, double lo, double hi) {
    CounterRng rng(seed, Stream::dataset, split);
    Dataset d;
    d.features.resize(n, 1);
    d.targets.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double x = lo + (hi - lo) * rng.uniform();
      d.features(i, 0) = x;
      d.targets(i) = (x >= 0.0 ? 1.0 : 0.0) + noise_sd * rng.normal();
    }
    return d;
  };
  return {make(0, -3.5, 3.5), make(1, -10.0, 10.0)};
}

Dataset make_ica_synthetic(Index sources, Index n, std::uint64_t seed) {
  CounterRng rng(seed, Stream::dataset, 7);
  Matrix mixing;
  for (int attempt = 0;; ++attempt) {
    mixing = Matrix::Identity(sources, sources);
    for (Index i = 0; i < mixing.size(); ++i) mixing.data()[i] += 0.5 * rng.normal();
    Eigen::JacobiSVD<Matrix> svd(mixing);
    const Vector s = svd.singularValues();
    if (s(sources - 1) > 0.2 && s(0) / s(sources - 1) < 10.0) break;
    if (attempt > 1000) throw NumericError("make_ica_synthetic: no well-conditioned mixing found");
  }
  Dataset d;
  d.features.resize(n, sources);
  d.targets = Vector::Zero(n);
  Vector src(sources);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < sources; ++k) {
      // Unit Laplace by inverse CDF.
      const double u = rng.uniform() - 0.5;
      src(k) = -(u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
    }
    d.features.row(i) = (mixing * src).transpose();
  }
  return d;
}

SparseRow parse_sparse_line(const std::string& line, std::size_t line_no) {
  std::istringstream in(line);
  std::string token;
  SparseRow row;
  if (!(in >> token)) throw ParseError("empty line", line_no);
  {
    const char* b = token.data();
    const char* e = b + token.size();
    if (*b == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, e, row.label);
    if (ec != std::errc() || ptr != e) throw ParseError("bad label '" + token + "'", line_no);
  }
  Index last = 0;
  while (in >> token) {
    const auto colon = token.find(':');
    if (colon == std::string::npos) throw ParseError("expected index:value, got '" + token + "'", line_no);
    Index idx = 0;
    double value = 0.0;
    const char* b = token.data();
    auto r1 = std::from_chars(b, b + colon, idx);
    auto r2 = std::from_chars(b + colon + 1, b + token.size(), value);
    if (r1.ec != std::errc() || r1.ptr != b + colon || r2.ec != std::errc() ||
        r2.ptr != b + token.size()) {
      throw ParseError("malformed entry '" + token + "'", line_no);
    }
    if (idx <= last) throw ParseError("feature indices must be positive and strictly increasing", line_no);
    last = idx;
    row.entries.emplace_back(idx, value);
  }
  return row;
}

Dataset load_sparse_dataset(const std::filesystem::path& path, Index n_features) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::vector<SparseRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    rows.push_back(parse_sparse_line(line, line_no));
    for (const auto& [idx, v] : rows.back().entries) {
      if (idx > n_features) {
        throw ParseError("feature index " + std::to_string(idx) + " exceeds " +
                             std::to_string(n_features),
                         line_no);
      }
    }
  }
  Dataset d;
  d.features = Batch::Zero(static_cast<Index>(rows.size()), n_features);
  d.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    d.targets(static_cast<Index>(r)) = rows[r].label;
    for (const auto& [idx, v] : rows[r].entries) d.features(static_cast<Index>(r), idx - 1) = v;
  }
  return d;
}

Dataset load_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw ParseError("non-numeric CSV cell", line_no);
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw ParseError("inconsistent CSV column count", line_no);
    }
    if (values.size() < 1) throw ParseError("empty CSV row", line_no);
    rows.push_back(std::move(values));
  }
  Dataset d;
  const Index n = static_cast<Index>(rows.size());
  const Index m = rows.empty() ? 0 : static_cast<Index>(rows.front().size()) - 1;
  d.features.resize(n, m);
  d.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) d.features(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    d.targets(i) = rows[static_cast<std::size_t>(i)].back();
  }
  return d;
}

}  // namespace nsfs
