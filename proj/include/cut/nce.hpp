#pragma once

// Patchwise contrastive (InfoNCE) losses with analytic gradients.
//
// Every loss is an (N+1)-way softmax cross-entropy over similarity logits
// v.u / tau, with the positive in slot 0. Log-sum-exp is evaluated with max
// subtraction, so large logits (small tau) do not overflow.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cut::nce {

inline constexpr double kDefaultTemperature = 0.07;

/// How per-location losses are combined. `mean` averages over the locations
/// of a layer and then over layers; `sum` is the plain double sum.
enum class Reduction { mean, sum };

/// Where PatchNCE draws negatives from.
enum class NegativeSource { internal, external, both };

Reduction parse_reduction(const std::string& name);
std::string to_string(Reduction r);
NegativeSource parse_negative_source(const std::string& name);
std::string to_string(NegativeSource s);

template <class T>
struct NceBatch {
  std::vector<T> query;                  // v
  std::vector<T> positive;               // v+
  std::vector<std::vector<T>> negatives;  // v-_n, n = 1..N
  T temperature = static_cast<T>(kDefaultTemperature);
};

template <class T>
struct NceGradient {
  std::vector<T> query;
  std::vector<T> positive;
  std::vector<std::vector<T>> negatives;
};

/// -log softmax(logits)[0]. Writes d/dlogits when `dlogits` is non-empty.
template <class T>
T cross_entropy_first(std::span<const T> logits, std::span<T> dlogits = {});

/// Returns v / ||v||. Throws InvalidArgument on a zero vector.
template <class T>
std::vector<T> normalized(std::span<const T> v);

/// InfoNCE loss of one query. Inputs are expected to be unit vectors; the
/// loss itself does not renormalize.
template <class T>
T info_nce_loss(const NceBatch<T>& batch, NceGradient<T>* grad = nullptr);

/// Row-major matrix of embeddings, one row per patch.
template <class T>
struct EmbeddingMatrix {
  std::int64_t rows = 0;
  std::int64_t width = 0;
  std::vector<T> values;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::int64_t r, std::int64_t w)
      : rows(r), width(w), values(static_cast<std::size_t>(r * w)) {}
  const T* row(std::int64_t i) const { return values.data() + i * width; }
  T* row(std::int64_t i) { return values.data() + i * width; }
};

struct SpatialIndex {
  std::int64_t h = 0;
  std::int64_t w = 0;
  bool operator==(const SpatialIndex&) const = default;
};

template <class T>
struct LayerEmbeddings {
  std::string layer_id;
  EmbeddingMatrix<T> embeddings;       // S_l x K, rows unit-norm
  std::vector<SpatialIndex> indices;   // S_l sampled locations
};

template <class T>
struct PatchEmbeddingSet {
  std::vector<LayerEmbeddings<T>> layers;
};

/// Gradients w.r.t. query and key embeddings, per layer, same layout.
template <class T>
struct PatchNceGradient {
  std::vector<EmbeddingMatrix<T>> query;
  std::vector<EmbeddingMatrix<T>> key;
};

/// Sum over rows of the per-row NCE loss for one layer.
///
/// Row i of `q` is the query, row i of `k` its positive. Negatives are the
/// other rows of `k` when `internal` is set, plus all rows of `negatives`
/// (m rows; may be 0). Gradients of the returned sum, multiplied by
/// `grad_scale`, are accumulated into dq/dk when non-null.
template <class T>
T layer_nce_sum(const T* q, const T* k, std::int64_t rows, std::int64_t width,
                const T* negatives, std::int64_t m, bool internal, T temperature,
                T grad_scale, T* dq, T* dk);

/// Multilayer PatchNCE with internal negatives (other locations of the same
/// image and layer). Query and key sets must agree on layer ids and indices.
template <class T>
T patchnce_loss(const PatchEmbeddingSet<T>& query, const PatchEmbeddingSet<T>& key,
                T temperature, Reduction reduction = Reduction::mean,
                PatchNceGradient<T>* grad = nullptr);

/// PatchNCE whose negatives come from an external per-layer dictionary
/// (`source == external`) or from the dictionary and the image (`both`).
/// `source == internal` ignores the queue and equals patchnce_loss.
template <class T>
T external_nce_loss(const PatchEmbeddingSet<T>& query, const PatchEmbeddingSet<T>& key,
                    const std::vector<EmbeddingMatrix<T>>& queue, T temperature,
                    NegativeSource source = NegativeSource::external,
                    Reduction reduction = Reduction::mean,
                    PatchNceGradient<T>* grad = nullptr);

}  // namespace cut::nce
