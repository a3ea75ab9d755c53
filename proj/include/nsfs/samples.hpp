#pragma once

#include "nsfs/types.hpp"

#include <filesystem>
#include <string>

namespace nsfs {

struct SampleMeta {
  std::string method;  // nsfs | sfs | sgld | sgd
  std::uint64_t seed = 0;
  double gamma = 0.0;  // 0 when not applicable
  double dt = 0.0;
  Index iterations = 0;
  double wall_seconds = 0.0;
};

/// Posterior draws (one per row) plus how they were produced.
struct SampleSet {
  Batch samples;
  SampleMeta meta;

  Index size() const { return samples.rows(); }
  Index dim() const { return samples.cols(); }
};

/// Writes one CSV row per sample and `<csv>.json` with the metadata.
/// `config_echo` (may be empty) is embedded verbatim under "config".
void save_samples(const SampleSet& set, const std::filesystem::path& csv,
                  const std::string& config_echo = {});
SampleSet load_samples(const std::filesystem::path& csv);

}  // namespace nsfs
