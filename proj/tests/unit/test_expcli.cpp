#include "doctest.h"

#include "nsfs/config.hpp"
#include "nsfs/experiment.hpp"
#include "test_util.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace nsfs;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("nsfs_expcli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

/// Exit status of the CLI with `args`; stdout and stderr go to `log`.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + NSFS_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig small_conjugate() {
  auto cfg = ExperimentConfig();
  cfg.set("nsfs.iterations", "20");
  cfg.set("nsfs.paths", "8");
  cfg.set("nsfs.dt_train", "0.1");
  cfg.set("nsfs.width", "8");
  cfg.set("nsfs.hidden_layers", "2");
  return cfg;
}

}  // namespace

TEST_CASE("config defaults, typed access and steps") {
  const ExperimentConfig cfg;
  CHECK(cfg.model_name() == "conjugate");
  CHECK(cfg.method() == "nsfs");
  CHECK(cfg.get_int("model.n") == 10);
  CHECK(cfg.get_real("nsfs.gamma") == 0.1);
  CHECK(cfg.get_string("nsfs.estimator") == "stl");
  CHECK(cfg.steps_for("nsfs.dt_test") == 100);
  CHECK(cfg.get_int("eval.ece_bins") == 10);

  auto step = ExperimentConfig::parse("[model]\nname = step\n");
  CHECK(step.get_real("nsfs.gamma") == doctest::Approx(0.0025));
  CHECK(step.get_int("nsfs.paths") == 32);
  CHECK(step.get_int("nsfs.batch_size") == 32);
  CHECK(step.get_int("nsfs.iterations") == 300);
  CHECK(step.get_real("nsfs.step_size") == 1e-4);
  CHECK(step.steps_for("nsfs.dt_train") == 20);
  CHECK(step.get_int("nsfs.samples") == 100);
  CHECK(step.get_real("sgld.a") == 1e-3);
  CHECK(step.get_real("sgld.b") == 10.0);
  CHECK(step.get_real("sgld.exponent") == 0.55);
  CHECK(step.get_real("model.prior_sd") == 0.3);
  CHECK(step.get_real("model.noise_sd") == 0.1);
  CHECK(step.get_real("sgd.step_size") == 1e-2);
}

TEST_CASE("config grammar: comments, whitespace, sections, errors with key paths") {
  const auto cfg = ExperimentConfig::parse(
      "; leading comment\n"
      "# another\n"
      "[run]\n"
      "seed = 42   ; trailing comment\n"
      "\n"
      "[nsfs]\n"
      "  gamma=0.5\n");
  CHECK(cfg.get_u64("run.seed") == 42);
  CHECK(cfg.get_real("nsfs.gamma") == 0.5);

  auto message = [](const std::string& text) {
    try {
      ExperimentConfig::parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("[nsfs]\nbogus = 1\n").find("nsfs.bogus") != std::string::npos);
  CHECK(message("[nsfs]\ngamma = -1\n").find("nsfs.gamma") != std::string::npos);
  CHECK(message("[nsfs]\npaths = 2.5\n").find("nsfs.paths") != std::string::npos);
  CHECK(message("[nsfs]\nestimator = vargrad\n").find("nsfs.estimator") != std::string::npos);
  CHECK(message("[model]\nhidden = 100,100\n").find("model.hidden") != std::string::npos);  // step only
  CHECK(message("[nsfs]\ndt_train = 0.03\n") == "no error");
  auto odd = ExperimentConfig::parse("[nsfs]\ndt_train = 0.03\n");
  CHECK_THROWS_AS(odd.steps_for("nsfs.dt_train"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/cfg.ini"), IoError);
}

TEST_CASE("property: echo parses back to an equal config") {
  for (const char* model : {"conjugate", "step", "logistic", "ica", "hierarchical"}) {
    auto cfg = ExperimentConfig();
    cfg.set("model.name", model);
    cfg.set("run.seed", std::to_string(testutil::uniform_int(1, 0, 1000)));
    cfg.set("nsfs.gamma", "0.123456789012345");
    const auto back = ExperimentConfig::parse(cfg.echo());
    CHECK(back == cfg);
    CHECK(back.echo() == cfg.echo());
    for (const auto& key : ExperimentConfig::keys_for_model(model)) {
      CHECK(cfg.echo().find(key.substr(key.find('.') + 1)) != std::string::npos);
    }
  }
}

TEST_CASE("switching models resets model defaults but keeps run settings") {
  auto cfg = ExperimentConfig();
  cfg.set("run.seed", "9");
  cfg.set("nsfs.gamma", "0.7");
  cfg.set("model.name", "step");
  CHECK(cfg.get_u64("run.seed") == 9);
  CHECK(cfg.get_real("nsfs.gamma") == doctest::Approx(0.0025));
  CHECK_THROWS_AS(cfg.get_real("model.prior_mean"), ConfigError);
}

TEST_CASE("summary statistics use the n - 1 denominator") {
  const auto s = summarize({1.0, 2.0, 4.0});
  CHECK(s.n == 3);
  CHECK(s.mean == doctest::Approx(7.0 / 3.0));
  CHECK(s.sd == doctest::Approx(std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                           (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0)));
  CHECK(std::isnan(summarize({1.0}).sd));
}

TEST_CASE("zero iterations leave the zero-initialised net; sampling is Brownian") {
  const auto dir = scratch("m0");
  auto cfg = small_conjugate();
  cfg.set("nsfs.iterations", "0");
  cfg.set("nsfs.gamma", "1");
  cfg.set("nsfs.samples", "10000");
  const auto art = run_train_nsfs(cfg, dir);
  const DriftNet fresh = make_drift_net(cfg, 1);
  const DriftNet saved = DriftNet::load(art.checkpoint);
  CHECK((saved.params().array() == fresh.params().array()).all());

  const auto set = run_sample(cfg, art.checkpoint, dir);
  REQUIRE(set.size() == 10000);
  const auto m = testutil::moments(set.samples.col(0).array());
  CHECK(std::abs(m.mean) < 3 * m.se_mean);
  CHECK(std::abs(m.var - 1.0) < 3 * m.se_var);
}

TEST_CASE("training is deterministic and artifacts carry the config") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto cfg = small_conjugate();
  run_train_nsfs(cfg, a);
  run_train_nsfs(cfg, b);
  CHECK(slurp(a / "train_curve.csv") == slurp(b / "train_curve.csv"));
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
  const auto meta = nlohmann::json::parse(slurp(a / "checkpoint.bin.json"));
  CHECK(meta.at("partial") == false);
  CHECK(meta.at("iterations_completed") == 20);
  CHECK(ExperimentConfig::parse(meta.at("config").get<std::string>()) == cfg);

  const auto s1 = run_sample(cfg, a / "checkpoint.bin", a);
  const auto s2 = run_sample(cfg, b / "checkpoint.bin", b);
  CHECK(slurp(a / "samples.csv") == slurp(b / "samples.csv"));
  CHECK(s1.size() == 100);
  CHECK(s2.meta.method == "nsfs");

  auto wrong = ExperimentConfig();
  wrong.set("model.name", "hierarchical");
  CHECK_THROWS_AS(run_sample(wrong, a / "checkpoint.bin", a), ConfigError);
}

TEST_CASE("wall-time guard writes partial artifacts") {
  const auto dir = scratch("partial");
  auto cfg = small_conjugate();
  cfg.set("nsfs.iterations", "1000000");
  cfg.set("run.time_limit_seconds", "0.2");
  const auto art = run_train_nsfs(cfg, dir);
  CHECK(art.result.stopped_early);
  const auto meta = nlohmann::json::parse(slurp(dir / "train_curve.csv.json"));
  CHECK(meta.at("partial") == true);
  CHECK(meta.at("iterations_completed").get<Index>() < 1000000);
}

TEST_CASE("eval writes a report and a monotone predictive curve for the step model") {
  const auto dir = scratch("eval");
  auto cfg = ExperimentConfig();
  cfg.set("model.name", "step");
  cfg.set("sgd.iterations", "5");
  const auto set = run_sgd(cfg, dir);
  CHECK(set.size() == 1);
  const auto report = run_eval(cfg, set, dir);
  CHECK(report.mse.has_value());
  CHECK(report.n_test == 100);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j.contains("config"));
  CHECK(j.at("accuracy").is_null());
  std::ifstream in(dir / "predictive_curve.csv");
  std::string line;
  std::getline(in, line);
  double prev = -1e300, first = 0.0, last = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    const double x = std::stod(line.substr(0, line.find(',')));
    CHECK(x > prev);
    if (rows == 0) first = x;
    last = prev = x;
    ++rows;
  }
  CHECK(rows == 201);
  CHECK(first == -10.0);
  CHECK(last == 10.0);
  CHECK(fs::exists(dir / "predictive_curve.csv.json"));
}

TEST_CASE("suite: empty manifest and a three-seed run") {
  const auto dir = scratch("suite");
  write(dir / "empty.txt", "# nothing here\n\n");
  const auto table = run_suite(dir / "empty.txt", dir / "out_empty", 1);
  CHECK(slurp(table) == std::string(kSuiteHeader) + "\n");

  write(dir / "sgd.ini", "[run]\nmethod = sgd\n[sgd]\niterations = 50\nbatch_size = 10\n");
  write(dir / "manifest.txt", "sgd.ini 1 2 3\n");
  const auto t2 = run_suite(dir / "manifest.txt", dir / "out", 1);
  std::ifstream in(t2);
  std::string header, row;
  std::getline(in, header);
  CHECK(header == kSuiteHeader);
  bool saw_mse = false;
  while (std::getline(in, row)) {
    if (row.find(",mse,") != std::string::npos) {
      saw_mse = true;
      CHECK(row.find(",3,") != std::string::npos);
    }
  }
  CHECK(saw_mse);
  for (int s : {1, 2, 3}) CHECK(fs::exists(dir / "out" / "sgd" / ("seed-" + std::to_string(s)) / "report.json"));
}

TEST_CASE("CLI exit codes") {
  const auto dir = scratch("cli");
  const auto log = dir / "log.txt";
  CHECK(cli("selfcheck", log) == 0);
  CHECK(slurp(log).find("FAIL") == std::string::npos);

  CHECK(cli("train --set nsfs.bogus=1 --out \"" + dir.string() + "\"", log) == 2);
  CHECK(slurp(log).find("nsfs.bogus") != std::string::npos);
  CHECK(cli("train --set nsfs.gamma=-1 --out \"" + dir.string() + "\"", log) == 2);
  CHECK(cli("train --config /nonexistent/x.ini", log) == 4);
  CHECK(cli("eval --samples /nonexistent/s.csv --out \"" + dir.string() + "\"", log) == 4);
  CHECK(cli("frobnicate", log) == 2);

  const std::string small =
      " --set nsfs.iterations=5 --set nsfs.paths=4 --set nsfs.dt_train=0.1 --out \"" + dir.string() + "\"";
  CHECK(cli("train" + small, log) == 0);
  CHECK(cli("sample" + small, log) == 0);
  CHECK(cli("eval" + small, log) == 0);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(cli("train --set run.time_limit_seconds=0.05 --set nsfs.iterations=1000000 --out \"" + dir.string() + "\"",
            log) == 5);
  // A config that drives the drift to overflow aborts numerically.
  CHECK(cli("train --set nsfs.step_size=1e6 --set nsfs.iterations=200 --set nsfs.paths=4 --out \"" +
                dir.string() + "\"",
            log) == 3);
}
