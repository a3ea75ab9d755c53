#include "nsfs/follmer.hpp"

#include "nsfs/rng.hpp"

#include <boost/random/normal_distribution.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <thread>

namespace nsfs {

namespace {

struct McWorkspace {
  Batch points;
  Eigen::ArrayXd log_f;
  Batch grad;
  Eigen::ArrayXd weights;
};

std::uint64_t stream_seed(std::uint64_t seed, std::uint32_t a, std::uint32_t b) {
  CounterRng rng(seed, Stream::follmer_mc, a, b);
  return rng.next_u64();
}

// Writes the drift into `out`; when `se` is non-null also the batch-means standard error.
void mc_drift(const TargetRatio& ratio, double t, const Eigen::Ref<const Vector>& x, Index m,
              std::mt19937_64& gen, McWorkspace& ws, Eigen::Ref<Vector> out, Vector* se) {
  const Index d = ratio.dim;
  const double scale = std::sqrt(std::max(0.0, 1.0 - t) * ratio.gamma);
  boost::random::normal_distribution<double> normal;
  ws.points.resize(m, d);
  for (Index i = 0; i < m; ++i) {
    for (Index c = 0; c < d; ++c) ws.points(i, c) = x(c) + scale * normal(gen);
  }
  ratio.evaluate(ws.points, ws.log_f, ws.grad);
  const double top = ws.log_f.maxCoeff();
  if (!std::isfinite(top)) {
    throw NumericError(
        "heat semigroup drift: every Monte Carlo weight underflowed; increase M or change gamma");
  }
  ws.weights = (ws.log_f - top).exp();
  const double total = ws.weights.sum();
  out = ratio.gamma * (ws.grad.transpose() * ws.weights.matrix()) / total;
  if (se) {
    const Index batches = m >= 40 ? 20 : 2;
    const Index per = m / batches;
    Batch est(batches, d);
    for (Index b = 0; b < batches; ++b) {
      const Index len = b + 1 == batches ? m - b * per : per;
      const auto w = ws.weights.segment(b * per, len).matrix();
      est.row(b) = ratio.gamma * (ws.grad.middleRows(b * per, len).transpose() * w).transpose() / w.sum();
    }
    const Eigen::RowVectorXd mean = est.colwise().mean();
    *se = ((est.rowwise() - mean).array().square().colwise().sum() /
           static_cast<double>(batches - 1) / static_cast<double>(batches))
              .sqrt()
              .transpose();
  }
}

}  // namespace

TargetRatio ratio_from_model(const BayesModel& model, double gamma) {
  TargetRatio r;
  r.dim = model.dim();
  r.gamma = gamma;
  const BayesModel* m = &model;
  r.evaluate = [m, gamma](const Batch& points, Eigen::ArrayXd& log_f, Batch& grad) {
    const Index n = points.rows();
    log_f.resize(n);
    grad.resize(n, points.cols());
    Vector g(points.cols());
    for (Index i = 0; i < n; ++i) {
      const Vector theta = points.row(i).transpose();
      g.setZero();
      double v = m->log_prior(theta, &g) + m->log_lik_all(theta, &g);
      v += 0.5 * theta.squaredNorm() / gamma;
      g += theta / gamma;
      log_f(i) = std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
      grad.row(i) = g.transpose();
    }
  };
  return r;
}

TargetRatio gaussian_target(const Vector& mean, const Matrix& cov, double gamma) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw std::invalid_argument("gaussian_target: covariance shape mismatch");
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian_target: covariance not SPD");
  const Matrix precision = llt.solve(Matrix::Identity(mean.size(), mean.size()));
  TargetRatio r;
  r.dim = mean.size();
  r.gamma = gamma;
  r.evaluate = [mean, precision, gamma](const Batch& points, Eigen::ArrayXd& log_f, Batch& grad) {
    const Batch centered = points.rowwise() - mean.transpose();
    const Batch pc = centered * precision;  // precision is symmetric
    log_f = -0.5 * (pc.array() * centered.array()).rowwise().sum() +
            0.5 * points.array().square().rowwise().sum() / gamma;
    grad = points / gamma - pc;
  };
  return r;
}

TargetRatio mixture_target(const Vector& weights, const Vector& means, const Vector& variances,
                           double gamma) {
  const Index c = weights.size();
  if (means.size() != c || variances.size() != c || c < 1) {
    throw std::invalid_argument("mixture_target: component arrays differ in length");
  }
  if ((variances.array() <= 0.0).any() || (weights.array() <= 0.0).any()) {
    throw std::invalid_argument("mixture_target: weights and variances must be positive");
  }
  Eigen::ArrayXd log_coef = weights.array().log() - 0.5 * (2.0 * std::numbers::pi * variances.array()).log();
  TargetRatio r;
  r.dim = 1;
  r.gamma = gamma;
  r.evaluate = [log_coef, means, variances, gamma, c](const Batch& points, Eigen::ArrayXd& log_f,
                                                      Batch& grad) {
    const Index n = points.rows();
    const auto x = points.col(0).array();
    Eigen::ArrayXXd q(n, c);
    for (Index j = 0; j < c; ++j) {
      q.col(j) = log_coef(j) - (x - means(j)).square() / (2.0 * variances(j));
    }
    const Eigen::ArrayXd top = q.rowwise().maxCoeff();
    Eigen::ArrayXd total = Eigen::ArrayXd::Zero(n);
    Eigen::ArrayXd slope = Eigen::ArrayXd::Zero(n);
    for (Index j = 0; j < c; ++j) {
      const Eigen::ArrayXd e = (q.col(j) - top).exp();
      total += e;
      slope -= e * (x - means(j)) / variances(j);
    }
    log_f = top + total.log() + x.square() / (2.0 * gamma);
    grad.resize(n, 1);
    grad.col(0) = (slope / total + x / gamma).matrix();
  };
  return r;
}

TargetRatio shifted(TargetRatio ratio, double shift) {
  auto inner = ratio.evaluate;
  ratio.evaluate = [inner, shift](const Batch& points, Eigen::ArrayXd& log_f, Batch& grad) {
    inner(points, log_f, grad);
    log_f += shift;
  };
  return ratio;
}

DriftEstimate heat_semigroup_drift_mc(const TargetRatio& ratio, double t, const Vector& x,
                                      Index samples, std::uint64_t seed) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("heat_semigroup_drift_mc: t outside [0, 1]");
  if (samples < 2) throw std::invalid_argument("heat_semigroup_drift_mc: need M >= 2");
  if (x.size() != ratio.dim) throw std::invalid_argument("heat_semigroup_drift_mc: dimension mismatch");
  std::mt19937_64 gen(stream_seed(seed, 0, 0));
  McWorkspace ws;
  DriftEstimate est;
  est.drift.resize(ratio.dim);
  mc_drift(ratio, t, x, samples, gen, ws, est.drift, &est.std_error);
  return est;
}

void gauss_hermite(int n, Vector& nodes, Vector& weights) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
  // Golub-Welsch for starting values, then Newton on the orthonormal recurrence.
  Matrix jacobi = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  nodes = eig.eigenvalues();
  weights.resize(n);
  const double pi_quarter = std::pow(std::numbers::pi, -0.25);
  for (int i = 0; i < n; ++i) {
    double x = nodes(i);
    double deriv = 0.0;
    for (int iter = 0; iter < 6; ++iter) {
      double p1 = pi_quarter, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = x * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      deriv = std::sqrt(2.0 * n) * p2;
      const double step = p1 / deriv;
      x -= step;
      if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    nodes(i) = x;
    weights(i) = 2.0 / (deriv * deriv);
  }
}

namespace {

Vector quadrature_drift(const TargetRatio& ratio, double t, const Eigen::Ref<const Vector>& x,
                        const Vector& h, const Vector& w) {
  const Index d = ratio.dim;
  const Index nodes = h.size();
  const double scale = std::sqrt(2.0 * std::max(0.0, 1.0 - t) * ratio.gamma);
  const Index total = d == 1 ? nodes : Index{nodes} * nodes;
  Batch points(total, d);
  Eigen::ArrayXd log_w(total);
  for (Index i = 0; i < total; ++i) {
    const Index a = i % nodes;
    const Index b = i / nodes;
    points(i, 0) = x(0) + scale * h(a);
    log_w(i) = std::log(w(a));
    if (d == 2) {
      points(i, 1) = x(1) + scale * h(b);
      log_w(i) += std::log(w(b));
    }
  }
  Eigen::ArrayXd log_f;
  Batch grad;
  ratio.evaluate(points, log_f, grad);
  const Eigen::ArrayXd l = log_w + log_f;
  const double top = l.maxCoeff();
  if (!std::isfinite(top)) throw NumericError("semigroup_quadrature_oracle: integrand vanishes");
  const Eigen::ArrayXd e = (l - top).exp();
  return ratio.gamma * (grad.transpose() * e.matrix()) / e.sum();
}

}  // namespace

Vector semigroup_quadrature_oracle(const TargetRatio& ratio, double t, const Vector& x, int nodes) {
  if (ratio.dim > 2) throw std::invalid_argument("semigroup_quadrature_oracle: only dimensions 1 and 2 are supported");
  if (x.size() != ratio.dim) throw std::invalid_argument("semigroup_quadrature_oracle: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("semigroup_quadrature_oracle: t outside [0, 1]");
  Vector h, w;
  gauss_hermite(nodes, h, w);
  return quadrature_drift(ratio, t, x, h, w);
}

QuadratureDrift::QuadratureDrift(TargetRatio ratio, int nodes) : ratio_(std::move(ratio)) {
  if (ratio_.dim > 2) throw std::invalid_argument("QuadratureDrift: only dimensions 1 and 2 are supported");
  gauss_hermite(nodes, nodes_, weights_);
}

void QuadratureDrift::evaluate(double t, const Batch& states, Batch& out) const {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("QuadratureDrift: t outside [0, 1]");
  out.resize(states.rows(), ratio_.dim);
  for (Index s = 0; s < states.rows(); ++s) {
    out.row(s) = quadrature_drift(ratio_, t, states.row(s).transpose(), nodes_, weights_).transpose();
  }
}

void parallel_for(Index n, int threads, const std::function<void(Index)>& body) {
  const int workers = static_cast<int>(std::min<Index>(std::max(1, threads), n));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index i; !failed && (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

SampleSet sfs_sample(const TargetRatio& ratio, const SfsOptions& o) {
  if (o.paths < 1 || o.steps < 1) throw std::invalid_argument("sfs_sample: S and k must be >= 1");
  if (o.mc_samples < 2) throw std::invalid_argument("sfs_sample: need M >= 2");
  const auto start = std::chrono::steady_clock::now();
  const Index d = ratio.dim;
  const double dt = 1.0 / static_cast<double>(o.steps);
  const double noise_scale = std::sqrt(ratio.gamma * dt);
  SampleSet out;
  out.samples.resize(o.paths, d);
  parallel_for(o.paths, o.threads, [&](Index s) {
    McWorkspace ws;
    Vector x = Vector::Zero(d);
    Vector u(d);
    Vector xi(d);
    for (Index j = 0; j < o.steps; ++j) {
      const auto a = static_cast<std::uint32_t>(s);
      const auto b = static_cast<std::uint32_t>(j);
      std::mt19937_64 gen(stream_seed(o.seed, a, b));
      mc_drift(ratio, static_cast<double>(j) * dt, x, o.mc_samples, gen, ws, u, nullptr);
      if (!u.allFinite()) {
        throw NumericError("non-finite drift at path " + std::to_string(s) + ", step " + std::to_string(j));
      }
      CounterRng noise(o.seed, Stream::brownian, a, b);
      for (Index c = 0; c < d; ++c) xi(c) = noise.normal();
      x = x + u * dt + noise_scale * xi;
    }
    out.samples.row(s) = x.transpose();
  });
  out.meta.method = "sfs";
  out.meta.seed = o.seed;
  out.meta.gamma = ratio.gamma;
  out.meta.dt = dt;
  out.meta.iterations = 0;
  out.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace nsfs
