#include "nsfs/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

namespace nsfs {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double log_mean_exp(const Vector& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().mean());
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> read_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

const char* task_name(Task t) {
  switch (t) {
    case Task::density: return "density";
    case Task::regression: return "regression";
    case Task::binary_classification: return "binary_classification";
  }
  return "unknown";
}

}  // namespace

double ece(std::span<const double> confidences, std::span<const bool> correct, int n_bins) {
  if (confidences.size() != correct.size()) throw std::invalid_argument("ece: length mismatch");
  if (n_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (confidences.empty()) return 0.0;
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> count(static_cast<std::size_t>(n_bins), 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ece: confidence outside [0, 1]");
    const auto b = static_cast<std::size_t>(std::min(n_bins - 1, static_cast<int>(c * n_bins)));
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1.0 : 0.0;
    count[b] += 1.0;
  }
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] > 0.0) total += count[b] / n * std::abs(hits[b] / count[b] - conf_sum[b] / count[b]);
  }
  return total;
}

std::string PredictiveReport::to_json() const {
  nlohmann::json j = {
      {"task", task},
      {"accuracy", opt(accuracy)},
      {"ece", opt(ece)},
      {"ece_bins", ece_bins},
      {"avg_log_lik", opt(avg_log_lik)},
      {"sum_log_lik", opt(sum_log_lik)},
      {"mse", opt(mse)},
      {"n_test", n_test},
      {"n_posterior_samples", n_posterior_samples},
  };
  return j.dump(2);
}

PredictiveReport PredictiveReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PredictiveReport r;
  r.task = j.value("task", "");
  r.accuracy = read_opt(j, "accuracy");
  r.ece = read_opt(j, "ece");
  r.avg_log_lik = read_opt(j, "avg_log_lik");
  r.sum_log_lik = read_opt(j, "sum_log_lik");
  r.mse = read_opt(j, "mse");
  r.n_test = j.value("n_test", Index{0});
  r.n_posterior_samples = j.value("n_posterior_samples", Index{0});
  r.ece_bins = j.value("ece_bins", 10);
  return r;
}

PredictiveReport predictive_eval(const SampleSet& samples, const BayesModel& model,
                                 const Dataset& test, int ece_bins) {
  if (samples.size() < 1) throw std::invalid_argument("predictive_eval: empty sample set");
  if (test.size() < 1) throw std::invalid_argument("predictive_eval: empty test set");
  if (samples.dim() != model.dim()) throw std::invalid_argument("predictive_eval: sample dimension mismatch");
  const Index n = test.size();
  const Index s_count = samples.size();
  PredictiveReport report;
  report.task = task_name(model.task());
  report.n_test = n;
  report.n_posterior_samples = s_count;
  report.ece_bins = ece_bins;

  Vector per_sample(s_count);
  double sum_ll = 0.0;
  switch (model.task()) {
    case Task::binary_classification: {
      std::vector<double> conf(static_cast<std::size_t>(n));
      std::unique_ptr<bool[]> hit(new bool[static_cast<std::size_t>(n)]);
      double correct = 0.0;
      for (Index i = 0; i < n; ++i) {
        double p = 0.0;
        for (Index s = 0; s < s_count; ++s) p += model.predict(samples.samples.row(s).transpose(), test, i);
        p /= static_cast<double>(s_count);
        const bool positive = test.targets(i) > 0.0;
        const double p_label = positive ? p : 1.0 - p;
        sum_ll += std::log(p_label);
        const bool predicted_positive = p >= 0.5;
        hit[static_cast<std::size_t>(i)] = predicted_positive == positive;
        correct += hit[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        conf[static_cast<std::size_t>(i)] = std::max(p, 1.0 - p);
      }
      report.accuracy = correct / static_cast<double>(n);
      report.ece = ece(conf, std::span<const bool>(hit.get(), static_cast<std::size_t>(n)), ece_bins);
      break;
    }
    case Task::regression: {
      const double sd = model.noise_sd();
      const double log_norm = -0.5 * kLogTwoPi - std::log(sd);
      double sq = 0.0;
      for (Index i = 0; i < n; ++i) {
        double mean_pred = 0.0;
        for (Index s = 0; s < s_count; ++s) {
          const double f = model.predict(samples.samples.row(s).transpose(), test, i);
          const double r = (test.targets(i) - f) / sd;
          per_sample(s) = log_norm - 0.5 * r * r;
          mean_pred += f;
        }
        mean_pred /= static_cast<double>(s_count);
        sq += (mean_pred - test.targets(i)) * (mean_pred - test.targets(i));
        sum_ll += log_mean_exp(per_sample);
      }
      report.mse = sq / static_cast<double>(n);
      break;
    }
    case Task::density: {
      for (Index i = 0; i < n; ++i) {
        for (Index s = 0; s < s_count; ++s) {
          per_sample(s) = model.log_lik(samples.samples.row(s).transpose(), test, i, nullptr);
        }
        sum_ll += log_mean_exp(per_sample);
      }
      break;
    }
  }
  report.sum_log_lik = sum_ll;
  report.avg_log_lik = sum_ll / static_cast<double>(n);
  return report;
}

PredictiveCurve predictive_curve(const SampleSet& samples, const BayesModel& model, double lo,
                                 double hi, Index points) {
  if (points < 2 || !(hi > lo)) throw std::invalid_argument("predictive_curve: bad grid");
  if (samples.size() < 1) throw std::invalid_argument("predictive_curve: empty sample set");
  Dataset grid;
  grid.features.resize(points, 1);
  grid.targets = Vector::Zero(points);
  PredictiveCurve c;
  c.x = Vector::LinSpaced(points, lo, hi);
  grid.features.col(0) = c.x;
  c.mean.resize(points);
  c.sd_function.resize(points);
  c.sd_predictive.resize(points);
  const double noise = model.noise_sd();
  const Index s_count = samples.size();
  Vector f(s_count);
  for (Index i = 0; i < points; ++i) {
    for (Index s = 0; s < s_count; ++s) f(s) = model.predict(samples.samples.row(s).transpose(), grid, i);
    c.mean(i) = f.mean();
    const double var = (f.array() - c.mean(i)).square().mean();
    c.sd_function(i) = std::sqrt(var);
    c.sd_predictive(i) = std::sqrt(var + noise * noise);
  }
  return c;
}

void write_curve_csv(const PredictiveCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  out << "x,mean,sd_function,sd_predictive\n";
  for (Index i = 0; i < curve.x.size(); ++i) {
    out << curve.x(i) << "," << curve.mean(i) << "," << curve.sd_function(i) << ","
        << curve.sd_predictive(i) << "\n";
  }
}

double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: no samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

MomentDiagnostics moment_diagnostics(const Batch& samples, const Vector& mean, const Vector& var,
                                     const std::function<double(double)>& cdf) {
  const Index n = samples.rows();
  const Index d = samples.cols();
  if (n < 2) throw std::invalid_argument("moment_diagnostics: need >= 2 samples");
  if (mean.size() != d || var.size() != d) throw std::invalid_argument("moment_diagnostics: oracle size mismatch");
  MomentDiagnostics m;
  m.mean_error.resize(d);
  m.var_error.resize(d);
  m.mean_z.resize(d);
  m.var_z.resize(d);
  const double nn = static_cast<double>(n);
  for (Index j = 0; j < d; ++j) {
    const auto col = samples.col(j).array();
    const double mu = col.mean();
    const Eigen::ArrayXd c = col - mu;
    const double s2 = c.square().sum() / (nn - 1.0);
    const double m4 = c.square().square().mean();
    m.mean_error(j) = mu - mean(j);
    m.var_error(j) = s2 - var(j);
    m.mean_z(j) = m.mean_error(j) / std::sqrt(s2 / nn);
    const double var_se = std::sqrt(std::max(m4 - s2 * s2, 1e-300) / nn);
    m.var_z(j) = m.var_error(j) / var_se;
  }
  m.ks_critical_1pct = 1.63 / std::sqrt(nn);
  if (cdf && d == 1) {
    std::vector<double> x(samples.data(), samples.data() + n);
    m.ks = ks_statistic(x, cdf);
  }
  return m;
}

}  // namespace nsfs
