#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "multipod/data.hpp"
#include "multipod/errors.hpp"
#include "multipod/model.hpp"
#include "multipod/serialization.hpp"
#include "multipod/train.hpp"

namespace multipod {

/// Exactly one of `cifar10` / `synthetic` is set.
struct DataSource {
  std::optional<std::string> cifar10;  // directory with the binary batches
  std::optional<SyntheticSpec> synthetic;
  /// Synthetic eval split size; 0 = a quarter of the training samples.
  int eval_samples = 0;
  /// First N training / test records only; 0 = all.
  int train_limit = 0;
  int eval_limit = 0;

  bool operator==(const DataSource&) const = default;
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  MultiPodSpec model;
  DataSource data;
  TrainingSchedule schedule;
  AugmentationSpec augmentation;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::optional<double> stop_at_train_accuracy;

  bool operator==(const RunConfig&) const = default;
};

/// Thrown with every field diagnostic of an invalid document.
class ConfigError : public ArgumentError {
 public:
  explicit ConfigError(FieldErrors errors)
      : ArgumentError("invalid config: " + errors.joined()), errors_(std::move(errors)) {}
  const FieldErrors& errors() const { return errors_; }

 private:
  FieldErrors errors_;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j, FieldErrors& errors);

/// Checks that need the environment (dataset files, image geometry).
void validate_run_config(const RunConfig& config, FieldErrors& errors);

/// Parse + full validation; throws ConfigError listing every problem.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

struct RunData {
  Dataset train;
  Dataset eval;
};

RunData load_run_data(const DataSource& source);

}  // namespace multipod
