#pragma once

// Adversarial, PatchNCE and identity-PatchNCE terms composed into the
// generator objective, plus the discriminator side and the R1 penalty.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cut/networks.hpp"
#include "cut/nce.hpp"

namespace cut::obj {

using ag::Var;

enum class GanMode { least_squares, non_saturating };

GanMode parse_gan_mode(const std::string& s);
std::string to_string(GanMode m);

struct ObjectiveConfig {
  double lambda_x = 1.0;
  double lambda_y = 1.0;
  GanMode gan_mode = GanMode::least_squares;
  double r1_gamma = 0.0;
  double temperature = nce::kDefaultTemperature;
  bool decoder_grad_through_nce = true;
  /// false: the key (input-image) path gets its own projection heads.
  bool shared_embedding_weights = true;
  bool flip_equivariance = false;
  nce::Reduction reduction = nce::Reduction::mean;
  nce::NegativeSource negative_source = nce::NegativeSource::internal;
  int patches_per_layer = 256;

  static ObjectiveConfig cut();
  static ObjectiveConfig fastcut();
  static ObjectiveConfig sincut();
  void validate() const;
};

/// Human-readable warnings for legal but suspicious settings.
std::vector<std::string> objective_warnings(const ObjectiveConfig& c);

template <class T>
struct GanTerms {
  Var<T> generator;
  Var<T> discriminator;
};

template <class T>
Var<T> gan_generator_loss(const Var<T>& fake_scores, GanMode mode);
template <class T>
Var<T> gan_discriminator_loss(const Var<T>& real_scores, const Var<T>& fake_scores, GanMode mode);
template <class T>
GanTerms<T> gan_losses(const Var<T>& real_scores, const Var<T>& fake_scores, GanMode mode);

/// (gamma / 2) * mean over samples of |d score / d x|^2 at the real batch.
/// Samples are discriminator inputs after prepare() (tiles for tile64).
/// Differentiable w.r.t. the discriminator parameters. Throws InvalidState
/// when the discriminator has no exact input gradient graph.
template <class T>
Var<T> r1_penalty(const net::Discriminator<T>& d, const Tensor<T>& real_batch, T gamma);

/// Multilayer PatchNCE over projected embeddings. queries[l] and keys[l] are
/// [N * S_l, K] with rows ordered (image, location); negatives are drawn per
/// image. `queue` (optional) supplies external negatives per layer.
template <class T>
Var<T> patchnce_term(const std::vector<Var<T>>& queries, const std::vector<Var<T>>& keys,
                     std::int64_t batch, T temperature, nce::Reduction reduction,
                     nce::NegativeSource source = nce::NegativeSource::internal,
                     const std::vector<nce::EmbeddingMatrix<T>>* queue = nullptr);

template <class T>
struct Networks {
  net::Generator<T> g;
  net::Discriminator<T> d;
  net::ProjectionHeads<T> heads;
  /// Key-path heads when embedding weights are not shared.
  net::ProjectionHeads<T> key_heads;

  const net::ProjectionHeads<T>& key_projection(const ObjectiveConfig& c) const {
    return c.shared_embedding_weights ? heads : key_heads;
  }
};

/// Draws per-layer flat positions for the given tap sizes.
using IndexSampleFn =
    std::function<std::vector<std::vector<std::int64_t>>(const std::vector<std::pair<std::int64_t, std::int64_t>>&)>;

template <class T>
struct GeneratorLoss {
  Var<T> total;
  Var<T> fake;      // G(x) as fed to the discriminator
  Var<T> identity;  // G(y), undefined when lambda_y == 0
  std::map<std::string, double> breakdown;  // gan_g, nce_x, nce_y
  /// Input-path key embeddings of x, per layer, with their positions.
  std::vector<Var<T>> keys_x;
  std::vector<std::vector<std::int64_t>> positions_x;
};

/// Generator passes shared by the discriminator and generator updates.
template <class T>
struct GeneratorForward {
  Tensor<T> x;
  Tensor<T> y;
  bool flip = false;
  Var<T> fake;
  net::FeatureStack<T> taps_x;
  Var<T> identity;  // undefined when lambda_y == 0
  net::FeatureStack<T> taps_y;
};

template <class T>
GeneratorForward<T> generator_forward(const Tensor<T>& x, const Tensor<T>& y, const Networks<T>& nets,
                                      const ObjectiveConfig& config, bool flip = false);

template <class T>
GeneratorLoss<T> total_generator_loss(const GeneratorForward<T>& forward, const Networks<T>& nets,
                                      const ObjectiveConfig& config, const IndexSampleFn& sample,
                                      const std::vector<nce::EmbeddingMatrix<T>>* queue = nullptr);

/// GAN term + lambda_x * PatchNCE(x, G(x)) + lambda_y * PatchNCE(y, G(y)).
/// `flip` mirrors the generator input and unflips the query features.
/// `queue` supplies external negatives when the source is not internal.
template <class T>
GeneratorLoss<T> total_generator_loss(const Tensor<T>& x, const Tensor<T>& y, const Networks<T>& nets,
                                      const ObjectiveConfig& config, const IndexSampleFn& sample,
                                      bool flip = false,
                                      const std::vector<nce::EmbeddingMatrix<T>>* queue = nullptr);

/// Wraps an [S, K] embedding matrix and its flat positions (row-major over
/// a map `map_width` wide) as one PatchEmbeddingSet layer.
template <class T>
nce::LayerEmbeddings<T> to_layer_embeddings(const std::string& layer_id, const Tensor<T>& rows,
                                            const std::vector<std::int64_t>& positions,
                                            std::int64_t map_width);

}  // namespace cut::obj
