#pragma once

// Momentum-averaged encoder/heads and per-layer FIFO queues of their
// embeddings, used as external negatives.

#include <cstdint>
#include <string>
#include <vector>

#include "cut/networks.hpp"
#include "cut/nce.hpp"

namespace cut::bank {

/// shadow = m * shadow + (1 - m) * live, elementwise. Throws InvalidState on
/// count or shape mismatch.
template <class T>
void momentum_update(const std::vector<ag::Parameter<T>*>& shadow,
                     const std::vector<const ag::Parameter<T>*>& live, double m);

template <class T>
class MomentumTwin {
 public:
  MomentumTwin() = default;
  MomentumTwin(const net::Generator<T>& g, const net::ProjectionHeads<T>& heads, double momentum = 0.999);

  /// Moves the encoder part of the generator and all heads toward `g`/`heads`.
  void update(net::Generator<T>& g, const net::ProjectionHeads<T>& heads);

  double momentum() const { return momentum_; }
  const net::Generator<T>& generator() const { return g_; }
  const net::ProjectionHeads<T>& heads() const { return heads_; }
  /// Encoder and head parameters in a fixed order (checkpoint order).
  std::vector<ag::Parameter<T>*> parameters();

  /// Embeddings of `image` at `positions` through the shadow networks,
  /// without gradient tracking. One [N * S_l, K] matrix per layer.
  std::vector<nce::EmbeddingMatrix<T>> embed(const Tensor<T>& image,
                                             const std::vector<std::vector<std::int64_t>>& positions) const;

 private:
  net::Generator<T> g_;
  net::ProjectionHeads<T> heads_;
  double momentum_ = 0.999;
};

/// Per-layer ring buffers of unit-norm rows. Oldest rows are evicted first.
template <class T>
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::vector<std::string> layer_ids, std::int64_t width, std::int64_t capacity = 16384);

  /// Appends rows to one layer. Throws InvalidArgument on width mismatch or
  /// rows that are not unit-norm within 1e-5.
  void enqueue(std::size_t layer, const nce::EmbeddingMatrix<T>& rows);
  void enqueue(const std::vector<nce::EmbeddingMatrix<T>>& per_layer);

  /// Current contents, oldest first. Throws InvalidState when empty.
  nce::EmbeddingMatrix<T> sample_negatives(std::size_t layer) const;
  std::vector<nce::EmbeddingMatrix<T>> all_negatives() const;

  std::int64_t size(std::size_t layer) const;
  std::int64_t min_size() const;
  std::int64_t capacity() const { return capacity_; }
  std::int64_t width() const { return width_; }
  const std::vector<std::string>& layer_ids() const { return layer_ids_; }

  /// Contents as a [size, width] tensor per layer, oldest first, and back.
  std::vector<Tensor<T>> export_state() const;
  void import_state(const std::vector<Tensor<T>>& state);

 private:
  struct Ring {
    std::vector<T> data;  // capacity * width
    std::int64_t head = 0;  // index of the oldest row
    std::int64_t size = 0;
  };
  std::vector<std::string> layer_ids_;
  std::int64_t width_ = 0;
  std::int64_t capacity_ = 0;
  std::vector<Ring> rings_;
};

}  // namespace cut::bank
