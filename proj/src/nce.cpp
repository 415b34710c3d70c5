#include "cut/nce.hpp"

#include <algorithm>
#include <cmath>

#include "cut/error.hpp"
#include "cut/simd/kernels.hpp"

namespace cut::nce {

Reduction parse_reduction(const std::string& name) {
  if (name == "mean") return Reduction::mean;
  if (name == "sum") return Reduction::sum;
  throw InvalidArgument("unknown reduction '" + name + "' (expected mean|sum)");
}

std::string to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

NegativeSource parse_negative_source(const std::string& name) {
  if (name == "internal") return NegativeSource::internal;
  if (name == "external") return NegativeSource::external;
  if (name == "both") return NegativeSource::both;
  throw InvalidArgument("unknown negative source '" + name + "' (expected internal|external|both)");
}

std::string to_string(NegativeSource s) {
  switch (s) {
    case NegativeSource::internal: return "internal";
    case NegativeSource::external: return "external";
    case NegativeSource::both: return "both";
  }
  return "internal";
}

namespace {

// -log(p / (p + r)) with p = exp(pos - mx) and r the summed negatives,
// both relative to the row maximum mx. log1p keeps the tiny losses of a
// dominant positive accurate.
template <class T>
T nce_from_parts(T pos, T mx, T p, T r) {
  if (pos >= mx) return std::log1p(r);
  return (mx - pos) + std::log(p + r);
}

}  // namespace

template <class T>
T cross_entropy_first(std::span<const T> logits, std::span<T> dlogits) {
  CUT_REQUIRE(!logits.empty(), InvalidArgument, "cross_entropy_first: no logits");
  const T mx = *std::max_element(logits.begin(), logits.end());
  const T p = std::exp(logits[0] - mx);
  T r = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) r += std::exp(logits[i] - mx);
  const T loss = nce_from_parts(logits[0], mx, p, r);
  if (!dlogits.empty()) {
    CUT_REQUIRE(dlogits.size() == logits.size(), InvalidArgument, "dlogits size");
    const T z = p + r;
    dlogits[0] = -r / z;
    for (std::size_t i = 1; i < logits.size(); ++i) dlogits[i] = std::exp(logits[i] - mx) / z;
  }
  return loss;
}

template <class T>
std::vector<T> normalized(std::span<const T> v) {
  T ss = 0;
  for (T x : v) ss += x * x;
  CUT_REQUIRE(ss > T(0), InvalidArgument, "cannot normalize a zero vector");
  const T inv = T(1) / std::sqrt(ss);
  std::vector<T> out(v.begin(), v.end());
  for (T& x : out) x *= inv;
  return out;
}

template <class T>
T info_nce_loss(const NceBatch<T>& b, NceGradient<T>* grad) {
  CUT_REQUIRE(b.temperature > T(0), InvalidArgument, "temperature must be positive");
  CUT_REQUIRE(!b.negatives.empty(), InvalidArgument, "InfoNCE needs at least one negative");
  const std::size_t k = b.query.size();
  CUT_REQUIRE(k > 0 && b.positive.size() == k, InvalidArgument,
              "query/positive dimension mismatch");
  for (const auto& n : b.negatives) {
    CUT_REQUIRE(n.size() == k, InvalidArgument, "negative dimension mismatch");
  }
  const auto n = static_cast<std::int64_t>(b.negatives.size());
  const auto kk = static_cast<std::int64_t>(k);
  std::vector<T> logits(static_cast<std::size_t>(n + 1));
  logits[0] = simd::dot<T>(b.query.data(), b.positive.data(), kk) / b.temperature;
  for (std::int64_t i = 0; i < n; ++i) {
    logits[static_cast<std::size_t>(i + 1)] =
        simd::dot<T>(b.query.data(), b.negatives[static_cast<std::size_t>(i)].data(), kk) /
        b.temperature;
  }
  if (grad == nullptr) return cross_entropy_first<T>(logits);

  std::vector<T> dl(logits.size());
  const T loss = cross_entropy_first<T>(logits, dl);
  const T inv_t = T(1) / b.temperature;
  grad->query.assign(k, T(0));
  grad->positive.assign(k, T(0));
  grad->negatives.assign(b.negatives.size(), std::vector<T>(k, T(0)));
  simd::axpy<T>(kk, dl[0] * inv_t, b.positive.data(), grad->query.data());
  simd::axpy<T>(kk, dl[0] * inv_t, b.query.data(), grad->positive.data());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    simd::axpy<T>(kk, dl[si + 1] * inv_t, b.negatives[si].data(), grad->query.data());
    simd::axpy<T>(kk, dl[si + 1] * inv_t, b.query.data(), grad->negatives[si].data());
  }
  return loss;
}

template <class T>
T layer_nce_sum(const T* q, const T* k, std::int64_t rows, std::int64_t width,
                const T* negatives, std::int64_t m, bool internal, T temperature,
                T grad_scale, T* dq, T* dk) {
  CUT_REQUIRE(temperature > T(0), InvalidArgument, "temperature must be positive");
  CUT_REQUIRE(rows >= 1 && width >= 1, InvalidArgument, "empty embedding matrix");
  const bool with_grad = dq != nullptr || dk != nullptr;
  const T inv_t = T(1) / temperature;

  // sim[i][j] = q_i . k_j / tau; ext[i][j] = q_i . z_j / tau
  std::vector<T> sim(static_cast<std::size_t>(rows * rows));
  simd::gemm<T>(false, true, rows, rows, width, inv_t, q, width, k, width, T(0), sim.data(), rows);
  std::vector<T> ext(static_cast<std::size_t>(rows * m));
  if (m > 0) {
    simd::gemm<T>(false, true, rows, m, width, inv_t, q, width, negatives, width, T(0), ext.data(), m);
  }

  T total = 0;
  for (std::int64_t i = 0; i < rows; ++i) {
    T* srow = sim.data() + i * rows;
    T* erow = ext.data() + i * m;
    const T pos = srow[i];
    // Masked row: the diagonal is the positive; non-diagonal entries are
    // negatives only when internal negatives are active.
    T mx = pos;
    if (internal) {
      for (std::int64_t j = 0; j < rows; ++j) mx = std::max(mx, srow[j]);
    }
    for (std::int64_t j = 0; j < m; ++j) mx = std::max(mx, erow[j]);
    const T p = std::exp(pos - mx);
    T r = 0;
    if (internal) {
      for (std::int64_t j = 0; j < rows; ++j)
        if (j != i) r += std::exp(srow[j] - mx);
    }
    for (std::int64_t j = 0; j < m; ++j) r += std::exp(erow[j] - mx);
    total += nce_from_parts(pos, mx, p, r);
    if (!with_grad) continue;
    // Overwrite the similarity rows with d(loss_i)/d(logit) * scale / tau.
    const T c = grad_scale * inv_t;
    const T z = p + r;
    for (std::int64_t j = 0; j < rows; ++j) {
      if (j == i) {
        srow[j] = -r / z * c;
      } else {
        srow[j] = internal ? std::exp(srow[j] - mx) / z * c : T(0);
      }
    }
    for (std::int64_t j = 0; j < m; ++j) erow[j] = std::exp(erow[j] - mx) / z * c;
  }
  if (with_grad) {
    if (dq != nullptr) {
      simd::gemm<T>(false, false, rows, width, rows, T(1), sim.data(), rows, k, width, T(1), dq, width);
      if (m > 0) {
        simd::gemm<T>(false, false, rows, width, m, T(1), ext.data(), m, negatives, width, T(1), dq, width);
      }
    }
    if (dk != nullptr) {
      simd::gemm<T>(true, false, rows, width, rows, T(1), sim.data(), rows, q, width, T(1), dk, width);
    }
  }
  return total;
}

namespace {

template <class T>
void check_pair(const PatchEmbeddingSet<T>& q, const PatchEmbeddingSet<T>& k) {
  CUT_REQUIRE(!q.layers.empty(), InvalidArgument, "PatchNCE: no layers");
  CUT_REQUIRE(q.layers.size() == k.layers.size(), InvalidArgument,
              "PatchNCE: query and key layer counts differ");
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    const auto& a = q.layers[l];
    const auto& b = k.layers[l];
    CUT_REQUIRE(a.layer_id == b.layer_id, InvalidArgument,
                "PatchNCE: layer id mismatch '" + a.layer_id + "' vs '" + b.layer_id + "'");
    CUT_REQUIRE(a.indices == b.indices, InvalidArgument,
                "PatchNCE: sampled indices differ on layer '" + a.layer_id + "'");
    CUT_REQUIRE(a.embeddings.rows == b.embeddings.rows && a.embeddings.width == b.embeddings.width,
                InvalidArgument, "PatchNCE: embedding shapes differ on layer '" + a.layer_id + "'");
    CUT_REQUIRE(a.embeddings.rows >= 1, InvalidArgument, "PatchNCE: empty layer '" + a.layer_id + "'");
    CUT_REQUIRE(static_cast<std::int64_t>(a.indices.size()) == a.embeddings.rows, InvalidArgument,
                "PatchNCE: index count does not match embedding rows on '" + a.layer_id + "'");
  }
}

template <class T>
T combined_loss(const PatchEmbeddingSet<T>& q, const PatchEmbeddingSet<T>& k,
                const std::vector<EmbeddingMatrix<T>>* queue, bool internal, T temperature,
                Reduction reduction, PatchNceGradient<T>* grad) {
  const std::size_t nl = q.layers.size();
  if (grad != nullptr) {
    grad->query.clear();
    grad->key.clear();
  }
  T total = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& qe = q.layers[l].embeddings;
    const auto& ke = k.layers[l].embeddings;
    const T scale = reduction == Reduction::mean
                        ? T(1) / (static_cast<T>(qe.rows) * static_cast<T>(nl))
                        : T(1);
    const T* neg = nullptr;
    std::int64_t m = 0;
    if (queue != nullptr) {
      const auto& z = (*queue)[l];
      neg = z.values.data();
      m = z.rows;
    }
    T* dq = nullptr;
    T* dk = nullptr;
    if (grad != nullptr) {
      grad->query.emplace_back(qe.rows, qe.width);
      grad->key.emplace_back(ke.rows, ke.width);
      dq = grad->query.back().values.data();
      dk = grad->key.back().values.data();
    }
    total += scale * layer_nce_sum<T>(qe.values.data(), ke.values.data(), qe.rows, qe.width, neg, m,
                                      internal, temperature, scale, dq, dk);
  }
  return total;
}

}  // namespace

template <class T>
T patchnce_loss(const PatchEmbeddingSet<T>& query, const PatchEmbeddingSet<T>& key, T temperature,
                Reduction reduction, PatchNceGradient<T>* grad) {
  CUT_REQUIRE(temperature > T(0), InvalidArgument, "temperature must be positive");
  check_pair(query, key);
  return combined_loss<T>(query, key, nullptr, true, temperature, reduction, grad);
}

template <class T>
T external_nce_loss(const PatchEmbeddingSet<T>& query, const PatchEmbeddingSet<T>& key,
                    const std::vector<EmbeddingMatrix<T>>& queue, T temperature,
                    NegativeSource source, Reduction reduction, PatchNceGradient<T>* grad) {
  CUT_REQUIRE(temperature > T(0), InvalidArgument, "temperature must be positive");
  check_pair(query, key);
  if (source == NegativeSource::internal) {
    return combined_loss<T>(query, key, nullptr, true, temperature, reduction, grad);
  }
  CUT_REQUIRE(queue.size() == query.layers.size(), InvalidArgument,
              "external NCE: queue layer count does not match embeddings");
  for (std::size_t l = 0; l < queue.size(); ++l) {
    CUT_REQUIRE(queue[l].rows >= 1, InvalidState,
                "external NCE: queue for layer '" + query.layers[l].layer_id + "' is empty");
    CUT_REQUIRE(queue[l].width == query.layers[l].embeddings.width, InvalidArgument,
                "external NCE: queue width mismatch on layer '" + query.layers[l].layer_id + "'");
  }
  return combined_loss<T>(query, key, &queue, source == NegativeSource::both, temperature,
                          reduction, grad);
}

#define CUT_NCE_INSTANTIATE(T)                                                                     \
  template T cross_entropy_first<T>(std::span<const T>, std::span<T>);                             \
  template std::vector<T> normalized<T>(std::span<const T>);                                       \
  template T info_nce_loss<T>(const NceBatch<T>&, NceGradient<T>*);                                \
  template T layer_nce_sum<T>(const T*, const T*, std::int64_t, std::int64_t, const T*,            \
                              std::int64_t, bool, T, T, T*, T*);                                   \
  template T patchnce_loss<T>(const PatchEmbeddingSet<T>&, const PatchEmbeddingSet<T>&, T,         \
                              Reduction, PatchNceGradient<T>*);                                    \
  template T external_nce_loss<T>(const PatchEmbeddingSet<T>&, const PatchEmbeddingSet<T>&,        \
                                  const std::vector<EmbeddingMatrix<T>>&, T, NegativeSource,       \
                                  Reduction, PatchNceGradient<T>*);

CUT_NCE_INSTANTIATE(float)
CUT_NCE_INSTANTIATE(double)

}  // namespace cut::nce
