#include "nsfs/experiment.hpp"
#include "nsfs/selfcheck.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

enum Exit : int {
  ok = 0,
  failure = 1,
  config_error = 2,
  numeric_abort = 3,
  io_error = 4,
  partial = 5,  // wall-time limit hit; artifacts are partial
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> threads;
  std::vector<std::string> overrides;  // section.key=value
};

nsfs::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? nsfs::ExperimentConfig() : nsfs::ExperimentConfig::load(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw nsfs::ConfigError(o + ": expected section.key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  if (c.threads) cfg.set("run.threads", std::to_string(*c.threads));
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI config file (defaults when omitted)");
  app->add_option("--seed", c.seed, "Overrides run.seed");
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--threads", c.threads, "Overrides run.threads")->check(CLI::PositiveNumber);
  app->add_option("--set", c.overrides, "Extra section.key=value overrides");
}

void print_report(const nsfs::PredictiveReport& r) {
  auto show = [](const char* name, const std::optional<double>& v) {
    if (v) std::cout << "  " << name << " = " << *v << "\n";
  };
  std::cout << "report (" << r.task << ", " << r.n_test << " test rows, " << r.n_posterior_samples
            << " samples)\n";
  show("accuracy", r.accuracy);
  show("ece", r.ece);
  show("avg_log_lik", r.avg_log_lik);
  show("sum_log_lik", r.sum_log_lik);
  show("mse", r.mse);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Schroedinger-Foellmer sampler experiments"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, samples_path, manifest;

  auto* train = app.add_subcommand("train", "Train the drift network; writes checkpoint and curve");
  auto* sample = app.add_subcommand("sample", "Draw posterior samples from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
  auto* eval = app.add_subcommand("eval", "Score a sample set on the model's test data");
  eval->add_option("--samples", samples_path, "Sample CSV (default OUT/samples.csv)");
  auto* sfs = app.add_subcommand("sfs", "Training-free Monte Carlo drift sampler");
  auto* sgld = app.add_subcommand("sgld", "Stochastic gradient Langevin dynamics");
  auto* sgd = app.add_subcommand("sgd", "Minibatch gradient ascent point estimate");
  auto* suite = app.add_subcommand("suite", "Run a manifest of configs over seeds");
  suite->add_option("manifest", manifest, "Manifest file")->required();
  auto* selfcheck = app.add_subcommand("selfcheck", "Oracle and invariant battery");
  for (auto* sub : {train, sample, eval, sfs, sgld, sgd, suite, selfcheck}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::config_error;
  }

  try {
    const nsfs::fs::path out = common.out;
    if (selfcheck->parsed()) {
      return nsfs::print_selfcheck(nsfs::run_selfcheck(), std::cout) ? Exit::ok : Exit::failure;
    }
    if (suite->parsed()) {
      const auto table = nsfs::run_suite(manifest, out, common.threads.value_or(1));
      std::cout << "wrote " << table.string() << "\n";
      return Exit::ok;
    }
    const auto cfg = resolve(common);
    if (train->parsed()) {
      const auto art = nsfs::run_train_nsfs(cfg, out);
      const auto& curve = art.result.curve;
      std::cout << "trained " << curve.size() << " iterations in " << art.result.wall_seconds << " s";
      if (!curve.empty()) std::cout << "; final objective " << curve.back();
      std::cout << "\nwrote " << art.checkpoint.string() << " and " << art.curve.string() << "\n";
      if (art.result.stopped_early) {
        std::cerr << "wall-time limit reached; checkpoint and curve are partial\n";
        return Exit::partial;
      }
      return Exit::ok;
    }
    if (sample->parsed()) {
      const auto set = nsfs::run_sample(cfg, checkpoint.empty() ? out / "checkpoint.bin" : nsfs::fs::path(checkpoint), out);
      std::cout << "wrote " << set.size() << " samples to " << (out / "samples.csv").string() << "\n";
      return Exit::ok;
    }
    if (eval->parsed()) {
      const auto set = nsfs::load_samples(samples_path.empty() ? out / "samples.csv" : nsfs::fs::path(samples_path));
      print_report(nsfs::run_eval(cfg, set, out));
      return Exit::ok;
    }
    nsfs::SampleSet set;
    if (sfs->parsed()) set = nsfs::run_sfs(cfg, out);
    if (sgld->parsed()) set = nsfs::run_sgld(cfg, out);
    if (sgd->parsed()) set = nsfs::run_sgd(cfg, out);
    print_report(nsfs::run_eval(cfg, set, out));
    return Exit::ok;
  } catch (const nsfs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return Exit::config_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid setting: " << e.what() << "\n";
    return Exit::config_error;
  } catch (const nsfs::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return Exit::numeric_abort;
  } catch (const nsfs::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return Exit::io_error;
  } catch (const nsfs::ParseError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return Exit::io_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::failure;
  }
}
