#pragma once

#include "nsfs/config.hpp"
#include "nsfs/drift_net.hpp"
#include "nsfs/metrics.hpp"
#include "nsfs/model.hpp"
#include "nsfs/samples.hpp"
#include "nsfs/training.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace nsfs {

namespace fs = std::filesystem;

struct ModelBundle {
  std::unique_ptr<BayesModel> model;
  Dataset test;  // held-out rows; the hierarchical model is scored on its own data
};

ModelBundle build_model(const ExperimentConfig& config);

/// Freshly initialized drift network for a state of size `dim` (zero output layer).
DriftNet make_drift_net(const ExperimentConfig& config, Index dim);

struct TrainArtifacts {
  fs::path checkpoint;
  fs::path curve;
  TrainResult result;
};

/// Adam on the minibatch objective; writes checkpoint.bin and train_curve.csv
/// (each with a .json sidecar carrying the resolved config). A run cut short by
/// run.time_limit_seconds still writes both, flagged as partial.
TrainArtifacts run_train_nsfs(const ExperimentConfig& config, const fs::path& out_dir);

/// nsfs.samples fresh paths under the checkpointed drift, dt = nsfs.dt_test.
/// Writes samples.csv.
SampleSet run_sample(const ExperimentConfig& config, const fs::path& checkpoint,
                     const fs::path& out_dir);

SampleSet run_sfs(const ExperimentConfig& config, const fs::path& out_dir);
SampleSet run_sgld(const ExperimentConfig& config, const fs::path& out_dir);
/// Point estimate as a one-row sample set.
SampleSet run_sgd(const ExperimentConfig& config, const fs::path& out_dir);

/// Scores samples on the model's test rows; writes report.json and, for
/// regression on one input feature, predictive_curve.csv over [eval.curve_lo, eval.curve_hi].
PredictiveReport run_eval(const ExperimentConfig& config, const SampleSet& samples,
                          const fs::path& out_dir);

/// Runs run.method end to end (training and sampling where needed) and evaluates.
PredictiveReport run_method(const ExperimentConfig& config, const fs::path& out_dir);

struct SummaryStat {
  Index n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample sd (n - 1); NaN when n < 2
};

SummaryStat summarize(const std::vector<double>& values);

/// Manifest lines: `<config path> [seed ...]`; `#` starts a comment, relative
/// paths resolve against the manifest's directory, and with no seeds run.seed is
/// used. Each run writes to out_dir/<config stem>/seed-<seed>/ and the table goes
/// to out_dir/suite.csv (header only for an empty manifest).
fs::path run_suite(const fs::path& manifest, const fs::path& out_dir, int threads);

/// Header of the suite table.
extern const char* const kSuiteHeader;

}  // namespace nsfs
