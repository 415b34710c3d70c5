#include "cut/external_bank.hpp"

#include <algorithm>
#include <cmath>

namespace cut::bank {

template <class T>
void momentum_update(const std::vector<ag::Parameter<T>*>& shadow,
                     const std::vector<const ag::Parameter<T>*>& live, double m) {
  CUT_REQUIRE(m >= 0 && m <= 1, InvalidArgument, "momentum must lie in [0, 1]");
  CUT_REQUIRE(shadow.size() == live.size(), InvalidState,
              "momentum update: parameter counts differ");
  const T a = static_cast<T>(m), b = static_cast<T>(1.0 - m);
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    CUT_REQUIRE(shadow[i]->value.shape == live[i]->value.shape, InvalidState,
                "momentum update: shape mismatch on '" + shadow[i]->name + "'");
    auto& s = shadow[i]->value;
    const auto& l = live[i]->value;
    for (std::int64_t j = 0; j < s.numel(); ++j) s[j] = a * s[j] + b * l[j];
  }
}

template <class T>
MomentumTwin<T>::MomentumTwin(const net::Generator<T>& g, const net::ProjectionHeads<T>& heads,
                              double momentum)
    : g_(g), heads_(heads), momentum_(momentum) {
  CUT_REQUIRE(momentum >= 0 && momentum <= 1, InvalidArgument, "momentum must lie in [0, 1]");
}

template <class T>
void MomentumTwin<T>::update(net::Generator<T>& g, const net::ProjectionHeads<T>& heads) {
  auto shadow = parameters();
  std::vector<const ag::Parameter<T>*> live;
  for (auto* p : g.encoder_parameters()) live.push_back(p);
  for (const auto* p : heads.parameters()) live.push_back(p);
  momentum_update<T>(shadow, live, momentum_);
}

template <class T>
std::vector<ag::Parameter<T>*> MomentumTwin<T>::parameters() {
  auto out = g_.encoder_parameters();
  for (auto* p : heads_.parameters()) out.push_back(p);
  return out;
}

template <class T>
std::vector<nce::EmbeddingMatrix<T>> MomentumTwin<T>::embed(
    const Tensor<T>& image, const std::vector<std::vector<std::int64_t>>& positions) const {
  const ag::NoGradGuard no_grad;
  auto f = g_.encode(ag::constant<T>(image));
  auto rows = heads_.project(f, positions);
  std::vector<nce::EmbeddingMatrix<T>> out;
  for (const auto& r : rows) {
    nce::EmbeddingMatrix<T> m(r.dim(0), r.dim(1));
    std::copy(r.value().data.begin(), r.value().data.end(), m.values.begin());
    out.push_back(std::move(m));
  }
  return out;
}

template <class T>
NegativeQueue<T>::NegativeQueue(std::vector<std::string> layer_ids, std::int64_t width,
                                std::int64_t capacity)
    : layer_ids_(std::move(layer_ids)), width_(width), capacity_(capacity) {
  CUT_REQUIRE(width_ >= 1 && capacity_ >= 1, InvalidArgument, "queue width and capacity must be >= 1");
  rings_.resize(layer_ids_.size());
  for (auto& r : rings_) r.data.assign(static_cast<std::size_t>(capacity_ * width_), T(0));
}

template <class T>
void NegativeQueue<T>::enqueue(std::size_t layer, const nce::EmbeddingMatrix<T>& rows) {
  CUT_REQUIRE(layer < rings_.size(), InvalidArgument, "queue layer index out of range");
  CUT_REQUIRE(rows.width == width_, InvalidArgument,
              "queue width " + std::to_string(width_) + " does not match rows of width " +
                  std::to_string(rows.width));
  for (std::int64_t i = 0; i < rows.rows; ++i) {
    double ss = 0;
    for (std::int64_t j = 0; j < width_; ++j) ss += static_cast<double>(rows.row(i)[j]) * rows.row(i)[j];
    CUT_REQUIRE(std::abs(std::sqrt(ss) - 1.0) <= 1e-5, InvalidArgument,
                "queue rows must be unit-norm");
  }
  auto& r = rings_[layer];
  for (std::int64_t i = 0; i < rows.rows; ++i) {
    std::int64_t slot;
    if (r.size < capacity_) {
      slot = (r.head + r.size) % capacity_;
      ++r.size;
    } else {
      slot = r.head;
      r.head = (r.head + 1) % capacity_;
    }
    std::copy(rows.row(i), rows.row(i) + width_, r.data.begin() + slot * width_);
  }
}

template <class T>
void NegativeQueue<T>::enqueue(const std::vector<nce::EmbeddingMatrix<T>>& per_layer) {
  CUT_REQUIRE(per_layer.size() == rings_.size(), InvalidArgument,
              "enqueue needs one matrix per queue layer");
  for (std::size_t l = 0; l < per_layer.size(); ++l) enqueue(l, per_layer[l]);
}

template <class T>
nce::EmbeddingMatrix<T> NegativeQueue<T>::sample_negatives(std::size_t layer) const {
  CUT_REQUIRE(layer < rings_.size(), InvalidArgument, "queue layer index out of range");
  const auto& r = rings_[layer];
  CUT_REQUIRE(r.size > 0, InvalidState, "negative queue for layer '" + layer_ids_[layer] + "' is empty");
  nce::EmbeddingMatrix<T> out(r.size, width_);
  for (std::int64_t i = 0; i < r.size; ++i) {
    const std::int64_t slot = (r.head + i) % capacity_;
    std::copy(r.data.begin() + slot * width_, r.data.begin() + (slot + 1) * width_, out.row(i));
  }
  return out;
}

template <class T>
std::vector<nce::EmbeddingMatrix<T>> NegativeQueue<T>::all_negatives() const {
  std::vector<nce::EmbeddingMatrix<T>> out;
  for (std::size_t l = 0; l < rings_.size(); ++l) out.push_back(sample_negatives(l));
  return out;
}

template <class T>
std::int64_t NegativeQueue<T>::size(std::size_t layer) const {
  CUT_REQUIRE(layer < rings_.size(), InvalidArgument, "queue layer index out of range");
  return rings_[layer].size;
}

template <class T>
std::int64_t NegativeQueue<T>::min_size() const {
  std::int64_t m = rings_.empty() ? 0 : capacity_;
  for (const auto& r : rings_) m = std::min(m, r.size);
  return m;
}

template <class T>
std::vector<Tensor<T>> NegativeQueue<T>::export_state() const {
  std::vector<Tensor<T>> out;
  for (std::size_t l = 0; l < rings_.size(); ++l) {
    const auto n = rings_[l].size;
    Tensor<T> t({n, width_});
    if (n > 0) {
      auto m = sample_negatives(l);
      std::copy(m.values.begin(), m.values.end(), t.data.begin());
    }
    out.push_back(std::move(t));
  }
  return out;
}

template <class T>
void NegativeQueue<T>::import_state(const std::vector<Tensor<T>>& state) {
  CUT_REQUIRE(state.size() == rings_.size(), InvalidArgument, "queue state layer count mismatch");
  for (std::size_t l = 0; l < state.size(); ++l) {
    const auto& t = state[l];
    CUT_REQUIRE(t.rank() == 2 && t.dim(1) == width_ && t.dim(0) <= capacity_, InvalidArgument,
                "queue state shape mismatch");
    auto& r = rings_[l];
    r.head = 0;
    r.size = t.dim(0);
    std::copy(t.data.begin(), t.data.end(), r.data.begin());
  }
}

template void momentum_update<float>(const std::vector<ag::Parameter<float>*>&,
                                     const std::vector<const ag::Parameter<float>*>&, double);
template void momentum_update<double>(const std::vector<ag::Parameter<double>*>&,
                                      const std::vector<const ag::Parameter<double>*>&, double);
template class MomentumTwin<float>;
template class MomentumTwin<double>;
template class NegativeQueue<float>;
template class NegativeQueue<double>;

}  // namespace cut::bank
