#pragma once

// Frechet distance between Gaussian summaries of image embeddings, pluggable
// embedders, the segmenter pixel-fraction statistic, and similarity / PCA
// visualizations of the learned patch embeddings.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cut/image.hpp"
#include "cut/objectives.hpp"

namespace cut::eval {

namespace fs = std::filesystem;
using img::Image;

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::int64_t count = 0;
};

/// Sample mean and unbiased covariance of the rows of `features`.
/// Throws InvalidArgument for fewer than 2 rows.
GaussianSummary summarize_features(const Eigen::MatrixXd& features);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), computed as
/// Tr sqrt(R S_b R) with R = S_a^(1/2) through symmetric eigendecompositions.
/// Eigenvalues above -1e-8 * |S| are clamped to 0; the result is clamped at 0.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual std::int64_t dim() const = 0;
  /// One row per [1, 3, H, W] image.
  virtual Eigen::MatrixXd embed(const std::vector<Image>& images) const = 0;
};

/// Per-channel average over a grid x grid partition: 3 * grid^2 features.
class IdentityPoolEmbedder : public Embedder {
 public:
  explicit IdentityPoolEmbedder(int grid = 8);
  std::string name() const override { return "identity_pool"; }
  std::int64_t dim() const override { return 3 * grid_ * grid_; }
  Eigen::MatrixXd embed(const std::vector<Image>& images) const override;

 private:
  int grid_;
};

/// Bilinear resize to side x side, then a frozen Gaussian projection
/// (entries N(0, 1/d_in)) drawn from `seed`.
class RandomProjectionEmbedder : public Embedder {
 public:
  explicit RandomProjectionEmbedder(std::uint64_t seed = 0, int out_dim = 64, int side = 64);
  std::string name() const override { return "fixed_random_projection"; }
  std::int64_t dim() const override { return proj_.rows(); }
  Eigen::MatrixXd embed(const std::vector<Image>& images) const override;

 private:
  int side_;
  Eigen::MatrixXd proj_;
};

/// Resizes to 299 x 299 (bilinear), writes PNGs to a scratch directory and
/// runs `command DIR OUT`. The command must write one whitespace-separated
/// feature row per image, in file-name order, to OUT.
class ExternalEmbedder : public Embedder {
 public:
  explicit ExternalEmbedder(std::string command, std::int64_t dim = 2048);
  std::string name() const override { return "external_inception"; }
  std::int64_t dim() const override { return dim_; }
  Eigen::MatrixXd embed(const std::vector<Image>& images) const override;
  /// The resize applied before the external command.
  static Image preprocess(const Image& image);

 private:
  std::string command_;
  std::int64_t dim_;
};

/// identity_pool | fixed_random_projection | external_inception. The
/// external command comes from `external_command` or CUT_INCEPTION_CMD.
std::unique_ptr<Embedder> make_embedder(const std::string& name, const std::string& external_command = "");

GaussianSummary summarize(const std::vector<Image>& images, const Embedder& embedder);
double fid(const std::vector<Image>& real, const std::vector<Image>& fake, const Embedder& embedder);
std::vector<Image> load_images(const fs::path& dir);

/// Per-pixel class ids of one image.
struct LabelMap {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> labels;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual LabelMap segment(const fs::path& image) const = 0;
};

/// Looks up DIR/<image stem>.png, a single-channel label image.
class LabelDirSegmenter : public Segmenter {
 public:
  explicit LabelDirSegmenter(fs::path dir);
  LabelMap segment(const fs::path& image) const override;

 private:
  fs::path dir_;
};

/// Runs `program IMAGE OUT.png`; OUT.png is a single-channel label image.
class ExecutableSegmenter : public Segmenter {
 public:
  explicit ExecutableSegmenter(fs::path program);
  LabelMap segment(const fs::path& image) const override;

 private:
  fs::path program_;
};

/// A directory of label images or an executable.
std::unique_ptr<Segmenter> make_segmenter(const fs::path& path);

LabelMap read_label_image(const fs::path& path);

/// Pixels whose label is in `classes` over all pixels of the set.
double class_pixel_fraction(const std::vector<LabelMap>& maps, const std::vector<std::int32_t>& classes);
/// Segments every image and checks that label maps match the image size.
double class_pixel_fraction(const std::vector<fs::path>& images, const Segmenter& segmenter,
                            const std::vector<std::int32_t>& classes);

/// Unit embeddings of every location of one tap, [H_l * W_l, K].
Tensor<float> layer_embeddings(const net::Generator<float>& g, const net::ProjectionHeads<float>& heads,
                               const Image& image, const std::string& layer_id, std::int64_t* map_h = nullptr,
                               std::int64_t* map_w = nullptr);

/// exp(q . k / tau) between the output-image embedding at `loc` (tap
/// coordinates) and every input-image embedding of the tap, min-max
/// normalized to [0, 1]. Returns [1, 1, H_l, W_l].
Tensor<float> similarity_map(const obj::Networks<float>& nets, const obj::ObjectiveConfig& oc,
                             const Image& input, const Image& output, const std::string& layer_id,
                             std::pair<std::int64_t, std::int64_t> loc);

/// Upsamples a [1, 1, h, w] map in [0, 1] to the image size and blends a
/// color ramp over the image. Result in [0, 1].
Image heatmap_overlay(const Image& image, const Tensor<float>& map);

struct PcaRendering {
  Eigen::MatrixXd components;  // 3 x K, orthonormal rows (zero rows when degenerate)
  std::vector<Image> images;   // [1, 3, H_l, W_l] in [0, 1]
  bool degenerate = false;
};

/// Fits a 3-component PCA on the pooled embeddings of all images at one tap
/// and renders each image in that shared basis.
PcaRendering pca_embedding_images(const net::Generator<float>& g, const net::ProjectionHeads<float>& heads,
                                  const std::vector<Image>& images, const std::string& layer_id);

}  // namespace cut::eval
