#pragma once

// Alternating discriminator / generator updates, checkpointing, metrics, and
// inference. Every random choice of iteration t is derived from (seed, t), so
// a run resumed from a checkpoint replays the uninterrupted run exactly.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cut/adam.hpp"
#include "cut/checkpoint.hpp"
#include "cut/config.hpp"
#include "cut/data.hpp"
#include "cut/external_bank.hpp"
#include "cut/objectives.hpp"

namespace cut::train {

namespace fs = std::filesystem;

/// A loss or gradient became NaN/Inf. what() carries the diagnostic.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t iteration, std::map<std::string, double> losses, double param_norm);
  std::int64_t iteration;
  std::map<std::string, double> losses;
  double parameter_norm;
};

struct StepResult {
  std::int64_t iteration = 0;
  std::map<std::string, double> losses;  // gan_g, gan_d, nce_x, nce_y, r1, total_g
  double lr = 0;
  bool flipped = false;
  bool external_negatives = false;
};

using BatchFn = std::function<data::Batch(std::int64_t iteration)>;

class Trainer {
 public:
  /// Builds all networks from the config's seed. `total_iterations` fixes the
  /// learning-rate schedule.
  Trainer(cfg::TrainConfig config, std::int64_t total_iterations);

  /// One D update then one G update on the batch of iteration
  /// `iteration() + 1`. Throws TrainingDiverged on non-finite values.
  StepResult step(const img::Image& x, const img::Image& y);

  /// Learning rate at 1-based iteration t.
  double learning_rate(std::int64_t t) const;

  std::int64_t iteration() const { return iteration_; }
  std::int64_t total_iterations() const { return total_; }
  const cfg::TrainConfig& config() const { return config_; }
  obj::Networks<float>& networks() { return nets_; }
  const obj::Networks<float>& networks() const { return nets_; }
  const bank::NegativeQueue<float>& queue() const { return queue_; }

  /// G(x) for a [N, 3, H, W] batch; sizes that are not a multiple of the
  /// generator's size_multiple are resized in and out.
  img::Image translate(const img::Image& x) const;

  /// Euclidean norm over all trainable parameters.
  double parameter_norm() const;

  ckpt::Checkpoint to_checkpoint() const;
  static Trainer from_checkpoint(const ckpt::Checkpoint& c);
  void save(const fs::path& path) const;
  static Trainer load(const fs::path& path);

  /// Metric column names for this configuration, in CSV order.
  std::vector<std::string> metric_columns() const;

 private:
  std::vector<ag::Parameter<float>*> generator_side_parameters();
  bool uses_queue() const;

  cfg::TrainConfig config_;
  std::int64_t total_ = 0;
  std::int64_t iteration_ = 0;
  obj::Networks<float> nets_;
  Adam<float> opt_g_;
  Adam<float> opt_d_;
  bank::MomentumTwin<float> twin_;
  bank::NegativeQueue<float> queue_;
};

/// Batches from an unpaired dataset.
BatchFn dataset_batches(data::UnpairedDataset ds, std::uint64_t seed, data::WarnFn warn = {});
/// Crop batches from one source/target pair.
BatchFn single_image_batches(img::Image source, img::Image target, data::SingleImageBatchSpec spec,
                             std::uint64_t seed);

struct FitOptions {
  cfg::RunDir dir;
  BatchFn batches;
  /// Images for the sample strips x | G(x) | y | G(y).
  std::optional<data::Batch> preview;
  std::function<void(const std::string&)> log;
  std::function<void(const StepResult&)> on_step;
  /// Stop after this iteration (0: run to the end).
  std::int64_t stop_after = 0;
};

/// Runs from trainer.iteration() + 1 to the end (or stop_after), appending
/// to metrics.csv and writing iter_N.ckpt / latest.ckpt every
/// checkpoint_interval iterations and at the end. On divergence a JSON dump
/// is written to logs/ and the exception is rethrown.
void fit(Trainer& trainer, const FitOptions& opts);

/// Drops metrics rows after `iteration` (used before resuming).
void truncate_metrics(const fs::path& metrics, std::int64_t iteration);

/// Parsed metrics.csv: header and one row per iteration.
struct MetricsLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<double> column(const std::string& name) const;
};
MetricsLog read_metrics(const fs::path& metrics);

}  // namespace cut::train
