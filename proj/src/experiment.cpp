#include "nsfs/experiment.hpp"

#include "nsfs/follmer.hpp"
#include "nsfs/models.hpp"
#include "nsfs/rng.hpp"
#include "nsfs/sgld.hpp"

#include "json.hpp"

#include <boost/math/distributions/normal.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace nsfs {

const char* const kSuiteHeader = "config,method,model,metric,n,mean,sd,summary";

namespace {

// Salts separating the random streams of one run.
constexpr std::uint64_t kNetSalt = 1;
constexpr std::uint64_t kTrainSalt = 2;
constexpr std::uint64_t kSampleSalt = 3;
constexpr std::uint64_t kBaselineSalt = 4;

std::uint64_t run_seed(const ExperimentConfig& c, std::uint64_t salt) {
  return mix_seed(c.get_u64("run.seed"), salt);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

fs::path sidecar(const fs::path& p) {
  auto s = p;
  s += ".json";
  return s;
}

Dataset observations_only(const Vector& y) {
  Dataset d;
  d.features.resize(y.size(), 0);
  d.targets = y;
  return d;
}

std::vector<Index> widths_from(const std::string& hidden) {
  std::vector<Index> w{1};
  std::stringstream ss(hidden);
  std::string part;
  while (std::getline(ss, part, ',')) w.push_back(std::stoll(part));
  w.push_back(1);
  return w;
}

bool batch_sampling(const ExperimentConfig& c) { return c.get_string("nsfs.sample_norm") == "batch"; }

SampleSet finish(SampleSet set, const ExperimentConfig& c, const fs::path& out_dir) {
  ensure_dir(out_dir);
  save_samples(set, out_dir / "samples.csv", c.echo());
  return set;
}

}  // namespace

ModelBundle build_model(const ExperimentConfig& c) {
  ModelBundle b;
  const std::string& name = c.model_name();
  if (name == "conjugate") {
    const double theta = c.get_real("model.theta_true");
    const double noise = c.get_real("model.noise_var");
    const auto seed = c.get_u64("model.data_seed");
    b.model = std::make_unique<ConjugateGaussianModel>(
        c.get_real("model.prior_mean"), c.get_real("model.prior_var"), noise,
        sample_gaussian_observations(theta, noise, c.get_int("model.n"), seed));
    b.test = observations_only(
        sample_gaussian_observations(theta, noise, c.get_int("model.test_n"), mix_seed(seed, 1)));
  } else if (name == "step") {
    auto data = make_step_dataset(c.get_u64("model.data_seed"));
    b.test = data.test;
    b.model = std::make_unique<BnnRegressionModel>(widths_from(c.get_string("model.hidden")),
                                                   c.get_real("model.prior_sd"),
                                                   c.get_real("model.noise_sd"), std::move(data.train));
  } else if (name == "logistic") {
    const Index m = c.get_int("model.n_features");
    auto train = load_sparse_dataset(c.get_string("model.train_path"), m);
    b.test = load_sparse_dataset(c.get_string("model.test_path"), m);
    b.model = std::make_unique<LogisticRegressionModel>(c.get_real("model.prior_scale"), std::move(train));
  } else if (name == "ica") {
    const Index n = c.get_int("model.n");
    const Index n_test = c.get_int("model.test_n");
    const Dataset all = make_ica_synthetic(c.get_int("model.sources"), n + n_test,
                                           c.get_u64("model.data_seed"));
    std::vector<Index> head(static_cast<std::size_t>(n)), tail(static_cast<std::size_t>(n_test));
    for (Index i = 0; i < n; ++i) head[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < n_test; ++i) tail[static_cast<std::size_t>(i)] = n + i;
    b.test = all.subset(tail);
    b.model = std::make_unique<IcaModel>(c.get_int("model.sources"), all.subset(head),
                                         c.get_real("model.prior_sd"), c.get_bool("model.include_log_det"));
  } else if (name == "hierarchical") {
    const Vector y = sample_hierarchical_observations(c.get_int("model.n"), c.get_real("model.sigma"),
                                                      c.get_u64("model.data_seed"));
    b.test = observations_only(y);
    b.model = std::make_unique<HierarchicalGaussianModel>(c.get_real("model.sigma"), y);
  } else {
    throw ConfigError("model.name: unknown model '" + name + "'");
  }
  return b;
}

DriftNet make_drift_net(const ExperimentConfig& c, Index dim) {
  return DriftNet(DriftNetShape{dim, dim, c.get_int("nsfs.width"), c.get_int("nsfs.hidden_layers"),
                                c.get_bool("nsfs.batch_norm")},
                  run_seed(c, kNetSalt));
}

TrainArtifacts run_train_nsfs(const ExperimentConfig& c, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const ModelBundle b = build_model(c);
  DriftNet net = make_drift_net(c, b.model->dim());
  TrainOptions o;
  o.iterations = c.get_int("nsfs.iterations");
  o.step_size = c.get_real("nsfs.step_size");
  o.batch_size = c.get_int("nsfs.batch_size");
  o.objective.paths = c.get_int("nsfs.paths");
  o.objective.steps = c.steps_for("nsfs.dt_train");
  o.objective.gamma = c.get_real("nsfs.gamma");
  o.objective.estimator = parse_estimator(c.get_string("nsfs.estimator"));
  o.seed = run_seed(c, kTrainSalt);
  o.time_limit_seconds = c.get_real("run.time_limit_seconds");
  net.set_mode(NetMode::train);

  TrainArtifacts art;
  art.checkpoint = out_dir / "checkpoint.bin";
  art.curve = out_dir / "train_curve.csv";
  std::ofstream curve(art.curve);
  if (!curve) throw IoError("cannot write " + art.curve.string());
  curve.precision(17);
  curve << "iteration,objective\n";
  // Streamed so a numeric abort still leaves the curve up to the failing step.
  o.on_iteration = [&](Index i, double v) { curve << i << "," << v << "\n" << std::flush; };
  art.result = train_nsfs(net, *b.model, o);
  net.set_mode(NetMode::eval);
  net.save(art.checkpoint);

  nlohmann::json meta = {
      {"iterations_requested", o.iterations},
      {"iterations_completed", static_cast<Index>(art.result.curve.size())},
      {"partial", art.result.stopped_early},
      {"wall_seconds", art.result.wall_seconds},
      {"state_dim", net.state_dim()},
      {"weights", net.param_count()},
      {"config", c.echo()},
  };
  write_text(sidecar(art.checkpoint), meta.dump(2) + "\n");
  write_text(sidecar(art.curve), meta.dump(2) + "\n");
  return art;
}

SampleSet run_sample(const ExperimentConfig& c, const fs::path& checkpoint, const fs::path& out_dir) {
  const ModelBundle b = build_model(c);
  DriftNet net = DriftNet::load(checkpoint);
  if (net.state_dim() != b.model->dim()) {
    throw ConfigError("model.name: checkpoint drives a " + std::to_string(net.state_dim()) +
                      "-dimensional state but the model has " + std::to_string(b.model->dim()));
  }
  net.set_mode(NetMode::eval);
  SampleSet set = sample_nsfs(net, c.get_int("nsfs.samples"), c.steps_for("nsfs.dt_test"),
                              c.get_real("nsfs.gamma"), run_seed(c, kSampleSalt), batch_sampling(c));
  set.meta.seed = c.get_u64("run.seed");
  set.meta.iterations = c.get_int("nsfs.iterations");
  return finish(std::move(set), c, out_dir);
}

SampleSet run_sfs(const ExperimentConfig& c, const fs::path& out_dir) {
  const ModelBundle b = build_model(c);
  SfsOptions o;
  o.paths = c.get_int("sfs.paths");
  o.steps = c.steps_for("sfs.dt");
  o.mc_samples = c.get_int("sfs.mc_samples");
  o.seed = run_seed(c, kBaselineSalt);
  o.threads = static_cast<int>(c.get_int("run.threads"));
  SampleSet set = sfs_sample(ratio_from_model(*b.model, c.get_real("sfs.gamma")), o);
  set.meta.seed = c.get_u64("run.seed");
  return finish(std::move(set), c, out_dir);
}

SampleSet run_sgld(const ExperimentConfig& c, const fs::path& out_dir) {
  const ModelBundle b = build_model(c);
  SgldSchedule sched{c.get_real("sgld.a"), c.get_real("sgld.b"), c.get_real("sgld.exponent")};
  SgldOptions o;
  o.iterations = c.get_int("sgld.iterations");
  o.batch_size = std::min(c.get_int("sgld.batch_size"), b.model->data().size());
  o.samples = c.get_int("sgld.samples");
  o.seed = run_seed(c, kBaselineSalt);
  o.init_from_prior = c.get_string("sgld.init") == "prior";
  SampleSet set = sgld_run(*b.model, sched, o);
  set.meta.seed = c.get_u64("run.seed");
  return finish(std::move(set), c, out_dir);
}

SampleSet run_sgd(const ExperimentConfig& c, const fs::path& out_dir) {
  const ModelBundle b = build_model(c);
  SgdOptions o;
  o.iterations = c.get_int("sgd.iterations");
  o.batch_size = std::min(c.get_int("sgd.batch_size"), b.model->data().size());
  o.seed = run_seed(c, kBaselineSalt);
  o.init_from_prior = c.get_string("sgd.init") == "prior";
  const auto start = std::chrono::steady_clock::now();
  const Vector theta = sgd_run(*b.model, StepSchedule{c.get_real("sgd.step_size"), 1.0, 0.0}, o);
  SampleSet set;
  set.samples = theta.transpose();
  set.meta.method = "sgd";
  set.meta.seed = c.get_u64("run.seed");
  set.meta.iterations = o.iterations;
  set.meta.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return finish(std::move(set), c, out_dir);
}

PredictiveReport run_eval(const ExperimentConfig& c, const SampleSet& samples, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const ModelBundle b = build_model(c);
  const auto report = predictive_eval(samples, *b.model, b.test, static_cast<int>(c.get_int("eval.ece_bins")));
  auto j = nlohmann::json::parse(report.to_json());
  j["method"] = samples.meta.method;
  j["config"] = c.echo();

  // Closed-form posteriors get a moment check alongside the predictive scores.
  if (const auto* conj = dynamic_cast<const ConjugateGaussianModel*>(b.model.get());
      conj && samples.size() >= 2) {
    const boost::math::normal post(conj->posterior_mean(), std::sqrt(conj->posterior_var()));
    const auto m = moment_diagnostics(samples.samples, Vector::Constant(1, conj->posterior_mean()),
                                      Vector::Constant(1, conj->posterior_var()),
                                      [&](double x) { return boost::math::cdf(post, x); });
    j["posterior_check"] = {{"mean_error", m.mean_error(0)}, {"var_error", m.var_error(0)},
                            {"ks", *m.ks}, {"ks_critical_1pct", m.ks_critical_1pct}};
  } else if (const auto* h = dynamic_cast<const HierarchicalGaussianModel*>(b.model.get());
             h && samples.size() >= 2) {
    const auto m = moment_diagnostics(samples.samples, h->posterior_mean(), h->posterior_cov().diagonal());
    std::vector<double> me(m.mean_error.data(), m.mean_error.data() + m.mean_error.size());
    std::vector<double> ve(m.var_error.data(), m.var_error.data() + m.var_error.size());
    j["posterior_check"] = {{"mean_error", me}, {"var_error", ve}};
  }
  write_text(out_dir / "report.json", j.dump(2) + "\n");

  if (b.model->task() == Task::regression && b.model->data().feature_dim() == 1) {
    const auto curve = predictive_curve(samples, *b.model, c.get_real("eval.curve_lo"),
                                        c.get_real("eval.curve_hi"), c.get_int("eval.curve_points"));
    write_curve_csv(curve, (out_dir / "predictive_curve.csv").string());
    write_text(sidecar(out_dir / "predictive_curve.csv"),
               nlohmann::json({{"method", samples.meta.method}, {"config", c.echo()}}).dump(2) + "\n");
  }
  return report;
}

PredictiveReport run_method(const ExperimentConfig& c, const fs::path& out_dir) {
  const std::string& method = c.method();
  SampleSet samples;
  if (method == "nsfs") {
    const auto art = run_train_nsfs(c, out_dir);
    samples = run_sample(c, art.checkpoint, out_dir);
  } else if (method == "sfs") {
    samples = run_sfs(c, out_dir);
  } else if (method == "sgld") {
    samples = run_sgld(c, out_dir);
  } else {
    samples = run_sgd(c, out_dir);
  }
  return run_eval(c, samples, out_dir);
}

SummaryStat summarize(const std::vector<double>& values) {
  SummaryStat s;
  s.n = static_cast<Index>(values.size());
  if (values.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) {
    s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(sq / static_cast<double>(s.n - 1));
  return s;
}

namespace {

struct ManifestEntry {
  fs::path config;
  std::vector<std::uint64_t> seeds;
  std::size_t line = 0;
};

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string path;
    if (!(ss >> path)) continue;
    ManifestEntry e;
    e.line = line_no;
    e.config = fs::path(path).is_absolute() ? fs::path(path) : manifest.parent_path() / path;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        e.seeds.push_back(std::stoull(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("manifest " + manifest.string() + ": bad seed '" + tok + "'", line_no);
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

fs::path run_suite(const fs::path& manifest, const fs::path& out_dir, int threads) {
  const auto entries = read_manifest(manifest);
  ensure_dir(out_dir);
  const fs::path table = out_dir / "suite.csv";
  std::ostringstream rows;
  rows << kSuiteHeader << "\n";
  for (const auto& e : entries) {
    ExperimentConfig base = ExperimentConfig::load(e.config);
    base.set("run.threads", std::to_string(threads));
    std::vector<std::uint64_t> seeds = e.seeds;
    if (seeds.empty()) seeds.push_back(base.get_u64("run.seed"));
    std::map<std::string, std::vector<double>> metrics;
    for (auto seed : seeds) {
      ExperimentConfig c = base;
      c.set("run.seed", std::to_string(seed));
      const auto r = run_method(c, out_dir / e.config.stem() / ("seed-" + std::to_string(seed)));
      const std::pair<const char*, std::optional<double>> fields[] = {
          {"accuracy", r.accuracy}, {"ece", r.ece}, {"avg_log_lik", r.avg_log_lik},
          {"sum_log_lik", r.sum_log_lik}, {"mse", r.mse}};
      for (const auto& [name, v] : fields) {
        if (v) metrics[name].push_back(*v);
      }
    }
    for (const auto& [name, values] : metrics) {
      const auto s = summarize(values);
      rows << e.config.stem().string() << "," << base.method() << "," << base.model_name() << ","
           << name << "," << s.n << "," << fmt(s.mean) << "," << fmt(s.sd) << ","
           << fmt(s.mean) << (s.n > 1 ? "±" + fmt(s.sd) : "") << "\n";
    }
  }
  write_text(table, rows.str());
  return table;
}

}  // namespace nsfs
