#include "cut/objectives.hpp"

#include <cmath>

#include "cut/data.hpp"
#include "cut/ops.hpp"
#include "cut/simd/kernels.hpp"

namespace cut::obj {

GanMode parse_gan_mode(const std::string& s) {
  if (s == "least_squares" || s == "lsgan") return GanMode::least_squares;
  if (s == "non_saturating") return GanMode::non_saturating;
  throw InvalidArgument("unknown gan mode '" + s + "' (expected least_squares|non_saturating)");
}

std::string to_string(GanMode m) {
  return m == GanMode::least_squares ? "least_squares" : "non_saturating";
}

ObjectiveConfig ObjectiveConfig::cut() { return {}; }

ObjectiveConfig ObjectiveConfig::fastcut() {
  ObjectiveConfig c;
  c.lambda_x = 10.0;
  c.lambda_y = 0.0;
  c.flip_equivariance = true;
  return c;
}

ObjectiveConfig ObjectiveConfig::sincut() {
  ObjectiveConfig c;
  c.gan_mode = GanMode::non_saturating;
  c.r1_gamma = 10.0;
  return c;
}

void ObjectiveConfig::validate() const {
  CUT_REQUIRE(std::isfinite(lambda_x) && lambda_x >= 0, InvalidArgument, "lambda_x must be >= 0");
  CUT_REQUIRE(std::isfinite(lambda_y) && lambda_y >= 0, InvalidArgument, "lambda_y must be >= 0");
  CUT_REQUIRE(std::isfinite(r1_gamma) && r1_gamma >= 0, InvalidArgument, "r1_gamma must be >= 0");
  CUT_REQUIRE(std::isfinite(temperature) && temperature > 0, InvalidArgument,
              "temperature must be > 0");
  CUT_REQUIRE(patches_per_layer >= 1, InvalidArgument, "patches_per_layer must be >= 1");
}

std::vector<std::string> objective_warnings(const ObjectiveConfig& c) {
  std::vector<std::string> w;
  if (c.lambda_x == 0 && c.lambda_y == 0) {
    w.push_back("lambda_x = lambda_y = 0: no content-preservation loss is active");
  }
  return w;
}

template <class T>
Var<T> gan_generator_loss(const Var<T>& fake, GanMode mode) {
  switch (mode) {
    case GanMode::least_squares: return ops::mse_const<T>(fake, T(1));
    case GanMode::non_saturating: return ops::softplus_mean<T>(fake, T(-1));
  }
  throw InvalidArgument("unknown gan mode");
}

template <class T>
Var<T> gan_discriminator_loss(const Var<T>& real, const Var<T>& fake, GanMode mode) {
  switch (mode) {
    case GanMode::least_squares:
      return ops::scale<T>(ops::add<T>(ops::mse_const<T>(real, T(1)), ops::mse_const<T>(fake, T(0))),
                           T(0.5));
    case GanMode::non_saturating:
      return ops::add<T>(ops::softplus_mean<T>(real, T(-1)), ops::softplus_mean<T>(fake, T(1)));
  }
  throw InvalidArgument("unknown gan mode");
}

template <class T>
GanTerms<T> gan_losses(const Var<T>& real, const Var<T>& fake, GanMode mode) {
  return {gan_generator_loss<T>(fake, mode), gan_discriminator_loss<T>(real, fake, mode)};
}

template <class T>
Var<T> r1_penalty(const net::Discriminator<T>& d, const Tensor<T>& real_batch, T gamma) {
  CUT_REQUIRE(gamma >= T(0), InvalidArgument, "r1 gamma must be >= 0");
  CUT_REQUIRE(d.piecewise_linear(), InvalidState,
              "r1_penalty: input gradient unavailable for this discriminator");
  const Tensor<T> prepared = d.prepare(ag::constant<T>(real_batch)).value();
  auto xv = ag::input<T>(prepared, true);
  ag::backward<T>(ops::sum<T>(d.score(xv)), ag::BackwardOptions{false});
  const Tensor<T> g = xv.grad();
  const std::int64_t n = prepared.dim(0);
  const std::int64_t per = prepared.numel() / n;
  double sq = 0;
  for (std::int64_t i = 0; i < n * per; ++i) sq += static_cast<double>(g[i]) * g[i];
  const T value = static_cast<T>(0.5 * static_cast<double>(gamma) * sq / static_cast<double>(n));
  // d/dtheta of |g|^2 equals 2 * d/dtheta (g(theta) . g) at fixed g, and
  // g(theta) . g is the derivative along g.
  auto along = d.directional_derivative(prepared, g);
  auto surrogate = ops::scale<T>(ops::mean<T>(along), gamma);
  return ops::straight_through<T>(Tensor<T>({1}, value), surrogate);
}

template <class T>
Var<T> patchnce_term(const std::vector<Var<T>>& queries, const std::vector<Var<T>>& keys,
                     std::int64_t batch, T temperature, nce::Reduction reduction,
                     nce::NegativeSource source, const std::vector<nce::EmbeddingMatrix<T>>* queue) {
  CUT_REQUIRE(!queries.empty() && queries.size() == keys.size(), InvalidArgument,
              "PatchNCE: query and key layer counts differ");
  CUT_REQUIRE(batch >= 1, InvalidArgument, "PatchNCE: batch must be >= 1");
  CUT_REQUIRE(temperature > T(0), InvalidArgument, "temperature must be positive");
  const bool ext = source != nce::NegativeSource::internal;
  const bool internal = source != nce::NegativeSource::external;
  if (ext) {
    CUT_REQUIRE(queue != nullptr && queue->size() == queries.size(), InvalidArgument,
                "PatchNCE: external negatives need one queue per layer");
  }
  const std::size_t nl = queries.size();
  std::vector<Tensor<T>> dq, dk;
  double total = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& q = queries[l].value();
    const auto& k = keys[l].value();
    require_same_shape(q, k, "PatchNCE query/key");
    CUT_REQUIRE(q.rank() == 2 && q.dim(0) % batch == 0, InvalidArgument,
                "PatchNCE: embedding rows not divisible by batch");
    const std::int64_t s = q.dim(0) / batch, width = q.dim(1);
    const T* neg = nullptr;
    std::int64_t m = 0;
    if (ext) {
      const auto& z = (*queue)[l];
      CUT_REQUIRE(z.rows >= 1, InvalidState, "PatchNCE: external queue layer is empty");
      CUT_REQUIRE(z.width == width, InvalidArgument, "PatchNCE: queue width mismatch");
      neg = z.values.data();
      m = z.rows;
    }
    const T scale = reduction == nce::Reduction::mean
                        ? T(1) / (static_cast<T>(batch * s) * static_cast<T>(nl))
                        : T(1);
    dq.emplace_back(q.shape);
    dk.emplace_back(k.shape);
    for (std::int64_t b = 0; b < batch; ++b) {
      const std::int64_t off = b * s * width;
      total += static_cast<double>(scale) *
               nce::layer_nce_sum<T>(q.ptr() + off, k.ptr() + off, s, width, neg, m, internal,
                                     temperature, scale, dq.back().ptr() + off,
                                     dk.back().ptr() + off);
    }
  }
  std::vector<Var<T>> inputs(queries);
  inputs.insert(inputs.end(), keys.begin(), keys.end());
  return ag::make_op<T>(
      Tensor<T>({1}, static_cast<T>(total)), std::move(inputs),
      [nl, dq = std::move(dq), dk = std::move(dk)](ag::Node<T>& self) {
        const T g = self.grad[0];
        for (std::size_t l = 0; l < nl; ++l) {
          for (auto [idx, src] : {std::pair{l, &dq[l]}, std::pair{nl + l, &dk[l]}}) {
            auto& in = self.inputs[idx];
            if (!in || !in->requires_grad) continue;
            simd::axpy<T>(src->numel(), g, src->ptr(), in->grad_buffer().ptr());
          }
        }
      });
}

namespace {

template <class T>
std::vector<std::pair<std::int64_t, std::int64_t>> tap_sizes(const net::FeatureStack<T>& f) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (const auto& t : f.taps) out.emplace_back(t.dim(2), t.dim(3));
  return out;
}

// PatchNCE between a source image and its translation. `source_taps` are
// the encoder taps of the unflipped source.
template <class T>
Var<T> translation_nce(const net::FeatureStack<T>& source_taps, const Var<T>& translated,
                       const Networks<T>& nets, const ObjectiveConfig& c, const IndexSampleFn& sample,
                       bool flip, const std::vector<nce::EmbeddingMatrix<T>>* queue,
                       std::vector<Var<T>>* keys_out, std::vector<std::vector<std::int64_t>>* pos_out) {
  const Var<T> qsrc = c.decoder_grad_through_nce ? translated : ops::detach<T>(translated);
  auto fq = nets.g.encode(qsrc);
  if (flip) fq = data::unflip_features<T>(fq);
  const auto positions = sample(tap_sizes(source_taps));
  auto q = nets.heads.project(fq, positions);
  auto k = nets.key_projection(c).project(source_taps, positions);
  const auto source = queue != nullptr ? c.negative_source : nce::NegativeSource::internal;
  auto loss = patchnce_term<T>(q, k, translated.dim(0), static_cast<T>(c.temperature), c.reduction,
                               source, queue);
  if (keys_out) *keys_out = std::move(k);
  if (pos_out) *pos_out = positions;
  return loss;
}

}  // namespace

template <class T>
GeneratorForward<T> generator_forward(const Tensor<T>& x, const Tensor<T>& y, const Networks<T>& nets,
                                      const ObjectiveConfig& c, bool flip) {
  GeneratorForward<T> f;
  f.x = x;
  f.y = y;
  f.flip = flip;
  const auto xin = ag::constant<T>(x);
  f.fake = nets.g.forward(flip ? ops::flip_width<T>(xin) : xin, &f.taps_x);
  if (c.lambda_y > 0) {
    const auto yin = ag::constant<T>(y);
    f.identity = nets.g.forward(flip ? ops::flip_width<T>(yin) : yin, &f.taps_y);
  }
  return f;
}

template <class T>
GeneratorLoss<T> total_generator_loss(const GeneratorForward<T>& f, const Networks<T>& nets,
                                      const ObjectiveConfig& c, const IndexSampleFn& sample,
                                      const std::vector<nce::EmbeddingMatrix<T>>* queue) {
  c.validate();
  GeneratorLoss<T> out;
  out.fake = f.fake;
  auto gan = gan_generator_loss<T>(nets.d.forward(out.fake), c.gan_mode);
  out.breakdown["gan_g"] = gan.item();
  Var<T> total = gan;

  const auto kx = f.flip ? nets.g.encode(ag::constant<T>(f.x)) : f.taps_x;
  auto nce_x = translation_nce<T>(kx, out.fake, nets, c, sample, f.flip, queue, &out.keys_x,
                                  &out.positions_x);
  out.breakdown["nce_x"] = nce_x.item();
  if (c.lambda_x > 0) total = ops::add<T>(total, ops::scale<T>(nce_x, static_cast<T>(c.lambda_x)));

  if (c.lambda_y > 0) {
    CUT_REQUIRE(f.identity.defined(), InvalidState, "total_generator_loss: forward pass lacks G(y)");
    out.identity = f.identity;
    const auto ky = f.flip ? nets.g.encode(ag::constant<T>(f.y)) : f.taps_y;
    auto nce_y = translation_nce<T>(ky, out.identity, nets, c, sample, f.flip, queue, nullptr, nullptr);
    out.breakdown["nce_y"] = nce_y.item();
    total = ops::add<T>(total, ops::scale<T>(nce_y, static_cast<T>(c.lambda_y)));
  }
  out.total = total;
  return out;
}

template <class T>
GeneratorLoss<T> total_generator_loss(const Tensor<T>& x, const Tensor<T>& y, const Networks<T>& nets,
                                      const ObjectiveConfig& c, const IndexSampleFn& sample,
                                      bool flip, const std::vector<nce::EmbeddingMatrix<T>>* queue) {
  return total_generator_loss<T>(generator_forward<T>(x, y, nets, c, flip), nets, c, sample, queue);
}

template <class T>
nce::LayerEmbeddings<T> to_layer_embeddings(const std::string& layer_id, const Tensor<T>& rows,
                                            const std::vector<std::int64_t>& positions,
                                            std::int64_t map_width) {
  CUT_REQUIRE(rows.rank() == 2 && rows.dim(0) == static_cast<std::int64_t>(positions.size()),
              InvalidArgument, "to_layer_embeddings: one row per position required");
  CUT_REQUIRE(map_width >= 1, InvalidArgument, "to_layer_embeddings: map width must be >= 1");
  nce::LayerEmbeddings<T> l;
  l.layer_id = layer_id;
  l.embeddings = nce::EmbeddingMatrix<T>(rows.dim(0), rows.dim(1));
  std::copy(rows.data.begin(), rows.data.end(), l.embeddings.values.begin());
  for (auto p : positions) l.indices.push_back({p / map_width, p % map_width});
  return l;
}

#define CUT_OBJ_INSTANTIATE(T)                                                                    \
  template Var<T> gan_generator_loss<T>(const Var<T>&, GanMode);                                  \
  template Var<T> gan_discriminator_loss<T>(const Var<T>&, const Var<T>&, GanMode);               \
  template GanTerms<T> gan_losses<T>(const Var<T>&, const Var<T>&, GanMode);                      \
  template Var<T> r1_penalty<T>(const net::Discriminator<T>&, const Tensor<T>&, T);               \
  template Var<T> patchnce_term<T>(const std::vector<Var<T>>&, const std::vector<Var<T>>&,        \
                                   std::int64_t, T, nce::Reduction, nce::NegativeSource,          \
                                   const std::vector<nce::EmbeddingMatrix<T>>*);                  \
  template GeneratorForward<T> generator_forward<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                    const Networks<T>&, const ObjectiveConfig&,   \
                                                    bool);                                        \
  template GeneratorLoss<T> total_generator_loss<T>(const GeneratorForward<T>&, const Networks<T>&, \
                                                    const ObjectiveConfig&, const IndexSampleFn&, \
                                                    const std::vector<nce::EmbeddingMatrix<T>>*); \
  template GeneratorLoss<T> total_generator_loss<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                    const Networks<T>&, const ObjectiveConfig&,   \
                                                    const IndexSampleFn&, bool,                   \
                                                    const std::vector<nce::EmbeddingMatrix<T>>*); \
  template nce::LayerEmbeddings<T> to_layer_embeddings<T>(const std::string&, const Tensor<T>&,   \
                                                          const std::vector<std::int64_t>&,       \
                                                          std::int64_t);

CUT_OBJ_INSTANTIATE(float)
CUT_OBJ_INSTANTIATE(double)

}  // namespace cut::obj
