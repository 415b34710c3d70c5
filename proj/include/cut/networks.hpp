#pragma once

// Generator (encoder + decoder), discriminators, and per-layer projection
// heads. All modules own their parameters by value; copying a module copies
// its weights.

#include <cstdint>
#include <string>
#include <vector>

#include "cut/autograd.hpp"
#include "cut/rng.hpp"
#include <json.hpp>

namespace cut::net {

using ag::Var;

enum class GeneratorVariant { resnet9, singleimage };
/// antialiased: stride-1 conv then blur-pool (taps see 1/9/15/35/99 px);
/// strided: stride-2 conv (CycleGAN layout).
enum class DownsampleMode { antialiased, strided };
enum class NormKind { instance, none };
enum class DiscriminatorVariant { patchgan, tile64, linear };

struct GeneratorSpec {
  GeneratorVariant variant = GeneratorVariant::resnet9;
  int input_channels = 3;
  int output_channels = 3;
  int base_width = 64;
  int n_blocks = 9;
  DownsampleMode downsample = DownsampleMode::antialiased;
  NormKind norm = NormKind::instance;
  /// Ordered tap names: "pixels", "stem", "downN", "resN".
  std::vector<std::string> tap_layers;

  static GeneratorSpec resnet9();
  static GeneratorSpec singleimage();

  int n_downsampling() const { return variant == GeneratorVariant::resnet9 ? 2 : 1; }
  /// Spatial sizes must be multiples of this.
  int size_multiple() const { return 1 << n_downsampling(); }
  void validate() const;
};

struct DiscriminatorSpec {
  DiscriminatorVariant variant = DiscriminatorVariant::patchgan;
  int input_channels = 3;
  int base_width = 64;
  /// patchgan: number of stride-2 stages (3 gives a 70x70 receptive field).
  int n_layers = 3;
  /// tile64: tile edge; linear: expected input edge.
  int tile_size = 64;
  NormKind norm = NormKind::instance;

  static DiscriminatorSpec patchgan();
  static DiscriminatorSpec tile64();
  void validate() const;
};

std::string to_string(GeneratorVariant v);
std::string to_string(DownsampleMode m);
std::string to_string(NormKind n);
std::string to_string(DiscriminatorVariant v);
GeneratorVariant parse_generator_variant(const std::string& s);
DownsampleMode parse_downsample(const std::string& s);
NormKind parse_norm(const std::string& s);
DiscriminatorVariant parse_discriminator_variant(const std::string& s);

nlohmann::json to_json(const GeneratorSpec& s);
nlohmann::json to_json(const DiscriminatorSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j);

/// Receptive field (pixels) of every tap, in tap order.
std::vector<int> tap_receptive_fields(const GeneratorSpec& spec);
/// Tap spatial sizes for an h x w input.
std::vector<std::pair<std::int64_t, std::int64_t>> tap_spatial_sizes(const GeneratorSpec& spec,
                                                                     std::int64_t h, std::int64_t w);
/// Patchgan / tile64 receptive field.
int discriminator_receptive_field(const DiscriminatorSpec& spec);

/// Encoder feature maps at each tap, plus the encoder's final output that
/// the decoder continues from.
template <class T>
struct FeatureStack {
  std::vector<std::string> layer_ids;
  std::vector<Var<T>> taps;
  Var<T> deepest;
};

template <class T>
class Generator {
 public:
  Generator() = default;
  Generator(GeneratorSpec spec, Rng& rng);

  const GeneratorSpec& spec() const { return spec_; }

  /// Runs the encoder (through the deepest tap). Throws InvalidArgument for
  /// inputs whose size is not a multiple of size_multiple().
  FeatureStack<T> encode(const Var<T>& image) const;
  /// Runs the remaining blocks from `features.deepest`; output in [-1, 1].
  Var<T> decode(const FeatureStack<T>& features) const;
  Var<T> forward(const Var<T>& image, FeatureStack<T>* taps = nullptr) const;

  std::vector<int> tap_channels() const;
  std::vector<ag::Parameter<T>*> parameters();
  std::vector<const ag::Parameter<T>*> parameters() const;
  /// Parameters used by encode().
  std::vector<ag::Parameter<T>*> encoder_parameters();
  std::int64_t parameter_count() const;
  /// Index of the last block that belongs to the encoder.
  int encoder_end() const { return encoder_end_; }

 private:
  enum class Kind { stem, down, res, up, out };
  struct Block {
    std::string name;
    Kind kind;
    int conv_a = -1;
    int conv_b = -1;
  };

  int add_param(const std::string& name, Shape shape, Rng& rng, bool zero);
  Var<T> norm(const Var<T>& x) const;
  Var<T> run_block(const Block& b, const Var<T>& x, Var<T>* tap) const;

  GeneratorSpec spec_;
  mutable std::vector<ag::Parameter<T>> params_;
  std::vector<Block> blocks_;
  std::vector<int> tap_block_;  // block index per tap, -1 for pixels
  int encoder_end_ = -1;
};

template <class T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(DiscriminatorSpec spec, Rng& rng);

  const DiscriminatorSpec& spec() const { return spec_; }

  /// Score map for an image batch. tile64 splits the input into tiles first
  /// and scores every tile; linear expects exactly tile_size x tile_size.
  Var<T> forward(const Var<T>& x) const;
  /// Tiles the batch for tile64; identity otherwise.
  Var<T> prepare(const Var<T>& x) const;
  /// Scores on already-prepared input.
  Var<T> score(const Var<T>& prepared) const;

  /// True when the network is piecewise linear in its input (no
  /// normalization), which is what directional_derivative needs.
  bool piecewise_linear() const;

  /// Per-sample directional derivative d/de sum(score(x + e*dir)) at e = 0,
  /// as a graph differentiable w.r.t. the parameters ([N]). Activation
  /// patterns are frozen at x. Throws InvalidState when not piecewise_linear.
  Var<T> directional_derivative(const Tensor<T>& prepared_x, const Tensor<T>& direction) const;

  std::vector<ag::Parameter<T>*> parameters();
  std::vector<const ag::Parameter<T>*> parameters() const;
  std::int64_t parameter_count() const;

 private:
  enum class Kind { conv, norm, lrelu };
  struct Layer {
    Kind kind;
    int weight = -1;
    int bias = -1;
    int stride = 1;
    int pad = 0;
  };
  int add_param(const std::string& name, Shape shape, Rng& rng, bool zero);
  void add_conv(int cin, int cout, int k, int stride, int pad, Rng& rng);

  DiscriminatorSpec spec_;
  mutable std::vector<ag::Parameter<T>> params_;
  std::vector<Layer> layers_;
};

/// Two-layer MLP per tap (affine, ReLU, affine) followed by row
/// L2-normalization.
template <class T>
class ProjectionHeads {
 public:
  ProjectionHeads() = default;
  ProjectionHeads(std::vector<std::string> layer_ids, std::vector<int> in_channels, int width,
                  Rng& rng, const std::string& prefix = "H");

  /// Embeds the features at the given flat positions (h * W + w), one list
  /// per tap, for every batch item. Returns [N * S_l, width] per tap.
  std::vector<Var<T>> project(const FeatureStack<T>& features,
                              const std::vector<std::vector<std::int64_t>>& positions) const;
  Var<T> project_layer(std::size_t layer, const Var<T>& feature_map,
                       const std::vector<std::int64_t>& positions) const;

  int width() const { return width_; }
  const std::vector<std::string>& layer_ids() const { return layer_ids_; }
  std::vector<ag::Parameter<T>*> parameters();
  std::vector<const ag::Parameter<T>*> parameters() const;
  std::int64_t parameter_count() const;

 private:
  std::vector<std::string> layer_ids_;
  std::vector<int> in_channels_;
  int width_ = 256;
  mutable std::vector<ag::Parameter<T>> params_;  // 4 per head: w1, b1, w2, b2
};

/// Deterministic FNV-1a hash of parameter values; used to verify which
/// networks an update touched.
template <class T>
std::uint64_t parameter_hash(const std::vector<const ag::Parameter<T>*>& params);

template <class T>
std::int64_t count_parameters(const std::vector<const ag::Parameter<T>*>& params);

}  // namespace cut::net
