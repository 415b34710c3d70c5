#pragma once

// Training configuration: preset expansion, a flat JSON schema with strict
// key checking, CLI overrides, run directories, and the run manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cut/data.hpp"
#include "cut/networks.hpp"
#include "cut/objectives.hpp"

namespace cut::cfg {

namespace fs = std::filesystem;

struct TrainConfig {
  std::string preset = "cut";
  int epochs = 400;
  /// When > 0, the run length in iterations (epochs are ignored).
  std::int64_t iterations = 0;
  double learning_rate = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  bool lr_decay = true;
  std::uint64_t seed = 0;
  obj::ObjectiveConfig objective;
  int embed_width = 256;
  net::GeneratorSpec generator = net::GeneratorSpec::resnet9();
  net::DiscriminatorSpec discriminator = net::DiscriminatorSpec::patchgan();
  int load_size = 286;
  int crop_size = 256;
  bool flip_augment = true;
  data::SingleImageBatchSpec single_image;
  /// Images per gradient-accumulation chunk; 0 processes the batch at once.
  int micro_batch = 0;
  std::int64_t checkpoint_interval = 5000;
  std::int64_t log_interval = 100;
  std::int64_t queue_capacity = 16384;
  double momentum = 0.999;
  /// External negatives are used once every layer's queue holds this many rows.
  std::int64_t queue_warmup = 256;
  std::string device = "cpu";

  /// Run length for a dataset with the given epoch length.
  std::int64_t total_iterations(std::int64_t epoch_length) const;
};

TrainConfig preset_defaults(const std::string& preset);

/// Flat JSON object with every key of the schema.
nlohmann::json to_json(const TrainConfig& c);
/// Applies the keys of `j` on top of `base`. Unknown keys or ill-typed values
/// throw ConfigError naming the key.
TrainConfig apply_json(TrainConfig base, const nlohmann::json& j);
/// Throws ConfigError naming the first offending key.
void validate(const TrainConfig& c);

/// Every schema key with a one-line description.
std::vector<std::pair<std::string, std::string>> schema();

struct ResolvedConfig {
  TrainConfig config;
  /// "key=value" for every key that differs from the preset default.
  std::vector<std::string> overrides;
  std::vector<std::string> warnings;
};

/// Preset defaults < config file < "key=value" overrides. `preset` may be
/// empty when the file names one.
ResolvedConfig resolve_config(const std::string& preset, const std::optional<fs::path>& config_file,
                              const std::vector<std::string>& overrides);

struct RunDir {
  fs::path root;
  fs::path checkpoints;
  fs::path samples;
  fs::path logs;
  fs::path metrics;
  fs::path manifest;
};

/// Creates root/{checkpoints, samples, logs, metrics.csv, manifest.json}.
/// A non-empty root is refused (ConfigError "out") unless `force`, in which
/// case the run goes to the first free "root-N" sibling.
RunDir run_dir_layout(const fs::path& out_root, bool force);
/// Layout of an existing run directory (for resume).
RunDir existing_run_dir(const fs::path& root);

struct RunManifest {
  nlohmann::json config;
  std::string code_version;
  std::uint64_t seed = 0;
  std::int64_t dataset_files = 0;
  std::uint64_t dataset_hash = 0;
  std::string start_time;
  std::vector<std::string> overrides;

  nlohmann::json to_json() const;
  void write(const fs::path& path) const;
};

std::string code_version();
std::string utc_timestamp();

}  // namespace cut::cfg
