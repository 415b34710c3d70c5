#pragma once

// Unpaired dataset loading, augmentation, patch-index sampling, the flip
// transform, and single-image crop batches. Every random choice is a pure
// function of (seed, iteration), so any iteration's batch can be rebuilt
// without replaying earlier ones.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cut/image.hpp"
#include "cut/networks.hpp"
#include "cut/rng.hpp"

namespace cut::data {

namespace fs = std::filesystem;
using img::Image;

struct UnpairedDataset {
  std::vector<fs::path> domain_x;
  std::vector<fs::path> domain_y;
  int load_size = 286;
  int crop_size = 256;
  bool flip = true;

  /// root/{split}A and root/{split}B. When root/manifest.json exists its
  /// "{split}A"/"{split}B" lists (relative paths) fix the order instead.
  static UnpairedDataset from_directory(const fs::path& root, const std::string& split = "train");

  std::int64_t epoch_length() const;
  /// File count and a content hash over both domains, in order.
  std::pair<std::int64_t, std::uint64_t> fingerprint() const;
  void validate() const;
};

struct Batch {
  Image x;
  Image y;
};

using WarnFn = std::function<void(const std::string&)>;

/// Draws batches for iteration t. Decoded files are cached; unreadable files
/// are skipped (with a warning) in favour of the next file of the domain.
class BatchLoader {
 public:
  BatchLoader(UnpairedDataset ds, std::uint64_t seed, WarnFn warn = {});

  Batch next_batch(std::int64_t iteration);
  /// Index of the file used for domain d (0 = X, 1 = Y) at iteration t,
  /// before skipping unreadable files.
  std::int64_t file_index(int domain, std::int64_t iteration) const;
  const UnpairedDataset& dataset() const { return ds_; }

 private:
  Image load_domain(int domain, std::int64_t iteration);
  Image augment(const Image& im, Rng& rng) const;

  UnpairedDataset ds_;
  std::uint64_t seed_;
  WarnFn warn_;
  std::map<fs::path, std::optional<Image>> cache_;
};

/// Uniform positions without replacement; all positions (in order) when
/// fewer than requested exist.
std::vector<std::int64_t> sample_layer_indices(std::int64_t positions, std::int64_t count, Rng& rng);

class IndexSampler {
 public:
  explicit IndexSampler(int patches_per_layer = 256) : patches_(patches_per_layer) {}
  int patches_per_layer() const { return patches_; }
  std::vector<std::vector<std::int64_t>> sample(
      const std::vector<std::pair<std::int64_t, std::int64_t>>& layer_shapes, Rng& rng) const;

 private:
  int patches_;
};

/// Mirror on the width axis.
template <class T>
Tensor<T> flip_equivariance_transform(bool apply, const Tensor<T>& image);

/// Maps (h, w) -> (h, W_l - 1 - w) on every tap.
template <class T>
net::FeatureStack<T> unflip_features(const net::FeatureStack<T>& features);

struct SingleImageBatchSpec {
  int scale_width_min = 384;
  int scale_width_max = 1024;
  int crops_per_iteration = 16;
  int crop_size = 128;
  int tile_size = 64;
  void validate() const;
};

struct SingleImageBatch {
  Image source;  // [crops, 3, crop, crop]
  Image target;
  std::int64_t scaled_width = 0;
  std::pair<std::int64_t, std::int64_t> source_size;  // scaled (h, w)
  std::pair<std::int64_t, std::int64_t> target_size;
  std::vector<std::pair<std::int64_t, std::int64_t>> source_origins;  // (top, left)
  std::vector<std::pair<std::int64_t, std::int64_t>> target_origins;
};

/// Scales both images to one random width (aspect kept) and cuts random
/// crops from each.
SingleImageBatch single_image_batch(const Image& source, const Image& target,
                                    const SingleImageBatchSpec& spec, Rng& rng);

/// Aspect-preserving resize to the given width.
Image scale_to_width(const Image& image, std::int64_t width);

}  // namespace cut::data
