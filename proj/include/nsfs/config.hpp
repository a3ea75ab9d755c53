#pragma once

#include "nsfs/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nsfs {

/// Resolved experiment configuration.
///
/// Text form is INI: `[section]` headers and `key = value` lines, `;` or `#`
/// comments. Every key is typed and has a default; keys that do not apply to the
/// selected model are rejected. See the README for the full key table.
class ExperimentConfig {
 public:
  /// Defaults only (model.name = conjugate).
  ExperimentConfig();

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Sets one key from text ("section.key"), validating it. Changing model.name
  /// drops keys that only applied to the old model.
  void set(const std::string& key_path, const std::string& value);

  std::string get_string(const std::string& key_path) const;
  double get_real(const std::string& key_path) const;
  Index get_int(const std::string& key_path) const;
  std::uint64_t get_u64(const std::string& key_path) const;
  bool get_bool(const std::string& key_path) const;

  /// Number of Euler steps for a step size key (1 / dt, which must be an integer).
  Index steps_for(const std::string& dt_key_path) const;

  const std::string& model_name() const;
  const std::string& method() const;

  /// Canonical INI text with all defaults materialized. Parsing it gives back an
  /// equal config.
  std::string echo() const;

  bool operator==(const ExperimentConfig& other) const { return values_ == other.values_; }

  /// All key paths accepted for the given model, in canonical order.
  static std::vector<std::string> keys_for_model(const std::string& model_name);

 private:
  void apply_defaults();
  const std::string& raw(const std::string& key_path) const;

  std::map<std::string, std::string> values_;  // key path -> canonical text
};

}  // namespace nsfs
