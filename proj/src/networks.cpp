#include "cut/networks.hpp"

#include <algorithm>
#include <cstring>

#include "cut/ops.hpp"

namespace cut::net {

namespace {

bool parse_tap(const std::string& name, const char* prefix, int& index) {
  const std::size_t n = std::strlen(prefix);
  if (name.size() <= n || name.compare(0, n, prefix) != 0) return false;
  const std::string rest = name.substr(n);
  if (!std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; })) return false;
  index = std::stoi(rest);
  return true;
}

template <class T>
Tensor<T> gaussian(const Shape& shape, Rng& rng, double stddev) {
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(standard_normal(rng) * stddev);
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace

GeneratorSpec GeneratorSpec::resnet9() {
  GeneratorSpec s;
  s.tap_layers = {"pixels", "down1", "down2", "res1", "res5"};
  return s;
}

GeneratorSpec GeneratorSpec::singleimage() {
  GeneratorSpec s;
  s.variant = GeneratorVariant::singleimage;
  s.n_blocks = 6;
  s.tap_layers = {"pixels", "down1", "res1", "res3"};
  return s;
}

void GeneratorSpec::validate() const {
  CUT_REQUIRE(input_channels >= 1 && output_channels >= 1, InvalidArgument,
              "generator channel counts must be positive");
  CUT_REQUIRE(base_width >= 1, InvalidArgument, "generator base_width must be positive");
  CUT_REQUIRE(n_blocks >= 1, InvalidArgument, "generator needs at least one residual block");
  CUT_REQUIRE(!tap_layers.empty(), InvalidArgument, "generator needs at least one tap layer");
  std::vector<std::string> seen;
  for (const auto& t : tap_layers) {
    CUT_REQUIRE(std::find(seen.begin(), seen.end(), t) == seen.end(), InvalidArgument,
                "duplicate tap layer '" + t + "'");
    seen.push_back(t);
    int i = 0;
    if (t == "pixels" || t == "stem") continue;
    if (parse_tap(t, "down", i)) {
      CUT_REQUIRE(i >= 1 && i <= n_downsampling(), InvalidArgument, "tap '" + t + "' out of range");
      continue;
    }
    if (parse_tap(t, "res", i)) {
      CUT_REQUIRE(i >= 1 && i <= n_blocks, InvalidArgument, "tap '" + t + "' out of range");
      continue;
    }
    throw InvalidArgument("unknown tap layer '" + t + "'");
  }
}

DiscriminatorSpec DiscriminatorSpec::patchgan() { return {}; }

DiscriminatorSpec DiscriminatorSpec::tile64() {
  DiscriminatorSpec s;
  s.variant = DiscriminatorVariant::tile64;
  s.tile_size = 64;
  s.norm = NormKind::none;
  return s;
}

void DiscriminatorSpec::validate() const {
  CUT_REQUIRE(input_channels >= 1 && base_width >= 1, InvalidArgument,
              "discriminator widths must be positive");
  CUT_REQUIRE(n_layers >= 1, InvalidArgument, "discriminator n_layers must be >= 1");
  CUT_REQUIRE(tile_size >= 1, InvalidArgument, "discriminator tile_size must be positive");
}

std::string to_string(GeneratorVariant v) {
  return v == GeneratorVariant::resnet9 ? "resnet9" : "singleimage";
}
std::string to_string(DownsampleMode m) {
  return m == DownsampleMode::antialiased ? "antialiased" : "strided";
}
std::string to_string(NormKind n) { return n == NormKind::instance ? "instance" : "none"; }
std::string to_string(DiscriminatorVariant v) {
  switch (v) {
    case DiscriminatorVariant::patchgan: return "patchgan";
    case DiscriminatorVariant::tile64: return "tile64";
    case DiscriminatorVariant::linear: return "linear";
  }
  return "patchgan";
}

GeneratorVariant parse_generator_variant(const std::string& s) {
  if (s == "resnet9") return GeneratorVariant::resnet9;
  if (s == "singleimage") return GeneratorVariant::singleimage;
  throw InvalidArgument("unknown generator variant '" + s + "'");
}
DownsampleMode parse_downsample(const std::string& s) {
  if (s == "antialiased") return DownsampleMode::antialiased;
  if (s == "strided") return DownsampleMode::strided;
  throw InvalidArgument("unknown downsample mode '" + s + "'");
}
NormKind parse_norm(const std::string& s) {
  if (s == "instance") return NormKind::instance;
  if (s == "none") return NormKind::none;
  throw InvalidArgument("unknown norm '" + s + "'");
}
DiscriminatorVariant parse_discriminator_variant(const std::string& s) {
  if (s == "patchgan") return DiscriminatorVariant::patchgan;
  if (s == "tile64") return DiscriminatorVariant::tile64;
  if (s == "linear") return DiscriminatorVariant::linear;
  throw InvalidArgument("unknown discriminator variant '" + s + "'");
}

nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"variant", to_string(s.variant)},   {"input_channels", s.input_channels},
          {"output_channels", s.output_channels}, {"base_width", s.base_width},
          {"n_blocks", s.n_blocks},            {"downsample", to_string(s.downsample)},
          {"norm", to_string(s.norm)},         {"tap_layers", s.tap_layers}};
}

nlohmann::json to_json(const DiscriminatorSpec& s) {
  return {{"variant", to_string(s.variant)}, {"input_channels", s.input_channels},
          {"base_width", s.base_width},     {"n_layers", s.n_layers},
          {"tile_size", s.tile_size},       {"norm", to_string(s.norm)}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.variant = parse_generator_variant(j.at("variant").get<std::string>());
  s.input_channels = j.at("input_channels").get<int>();
  s.output_channels = j.at("output_channels").get<int>();
  s.base_width = j.at("base_width").get<int>();
  s.n_blocks = j.at("n_blocks").get<int>();
  s.downsample = parse_downsample(j.at("downsample").get<std::string>());
  s.norm = parse_norm(j.at("norm").get<std::string>());
  s.tap_layers = j.at("tap_layers").get<std::vector<std::string>>();
  s.validate();
  return s;
}

DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j) {
  DiscriminatorSpec s;
  s.variant = parse_discriminator_variant(j.at("variant").get<std::string>());
  s.input_channels = j.at("input_channels").get<int>();
  s.base_width = j.at("base_width").get<int>();
  s.n_layers = j.at("n_layers").get<int>();
  s.tile_size = j.at("tile_size").get<int>();
  s.norm = parse_norm(j.at("norm").get<std::string>());
  s.validate();
  return s;
}

std::vector<int> tap_receptive_fields(const GeneratorSpec& spec) {
  spec.validate();
  // rf/jump after each named point of the encoder.
  std::vector<std::pair<std::string, int>> at;
  int rf = 1, jump = 1;
  at.emplace_back("pixels", rf);
  rf += 6 * jump;
  at.emplace_back("stem", rf);
  for (int i = 1; i <= spec.n_downsampling(); ++i) {
    rf += 2 * jump;
    if (spec.downsample == DownsampleMode::antialiased) {
      at.emplace_back("down" + std::to_string(i), rf);
      rf += 2 * jump;
      jump *= 2;
    } else {
      jump *= 2;
      at.emplace_back("down" + std::to_string(i), rf);
    }
  }
  for (int i = 1; i <= spec.n_blocks; ++i) {
    rf += 4 * jump;
    at.emplace_back("res" + std::to_string(i), rf);
  }
  std::vector<int> out;
  for (const auto& t : spec.tap_layers) {
    for (const auto& [name, r] : at)
      if (name == t) out.push_back(r);
  }
  return out;
}

std::vector<std::pair<std::int64_t, std::int64_t>> tap_spatial_sizes(const GeneratorSpec& spec,
                                                                     std::int64_t h, std::int64_t w) {
  spec.validate();
  const int m = spec.size_multiple();
  CUT_REQUIRE(h > 0 && w > 0 && h % m == 0 && w % m == 0, InvalidArgument,
              "image size " + std::to_string(h) + "x" + std::to_string(w) +
                  " is not a multiple of " + std::to_string(m));
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (const auto& t : spec.tap_layers) {
    int i = 0;
    if (t == "pixels" || t == "stem") {
      out.emplace_back(h, w);
    } else if (parse_tap(t, "down", i)) {
      const int shift = spec.downsample == DownsampleMode::antialiased ? i - 1 : i;
      out.emplace_back(h >> shift, w >> shift);
    } else {
      out.emplace_back(h / m, w / m);
    }
  }
  return out;
}

int discriminator_receptive_field(const DiscriminatorSpec& spec) {
  spec.validate();
  if (spec.variant == DiscriminatorVariant::linear) return spec.tile_size;
  // Walk backwards: two stride-1 convs, then n_layers stride-2 convs.
  int rf = 1;
  rf = (rf - 1) * 1 + 4;
  rf = (rf - 1) * 1 + 4;
  for (int i = 0; i < spec.n_layers; ++i) rf = (rf - 1) * 2 + 4;
  return rf;
}

// ---------------------------------------------------------------- Generator

template <class T>
int Generator<T>::add_param(const std::string& name, Shape shape, Rng& rng, bool zero) {
  Tensor<T> v = zero ? Tensor<T>(shape) : gaussian<T>(shape, rng, kInitStd);
  params_.emplace_back(name, std::move(v));
  return static_cast<int>(params_.size()) - 1;
}

template <class T>
Generator<T>::Generator(GeneratorSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  const int base = spec_.base_width;
  const int nd = spec_.n_downsampling();
  auto conv = [&](const std::string& name, int cin, int cout, int k) {
    const int w = add_param(name + ".weight", {cout, cin, k, k}, rng, false);
    add_param(name + ".bias", {cout}, rng, true);
    return w;
  };
  blocks_.push_back({"stem", Kind::stem, conv("G.stem", spec_.input_channels, base, 7)});
  for (int i = 1; i <= nd; ++i) {
    const std::string n = "down" + std::to_string(i);
    blocks_.push_back({n, Kind::down, conv("G." + n, base << (i - 1), base << i, 3)});
  }
  const int deep = base << nd;
  for (int i = 1; i <= spec_.n_blocks; ++i) {
    const std::string n = "res" + std::to_string(i);
    Block b{n, Kind::res, conv("G." + n + ".conv1", deep, deep, 3)};
    b.conv_b = conv("G." + n + ".conv2", deep, deep, 3);
    blocks_.push_back(b);
  }
  for (int i = 1; i <= nd; ++i) {
    const std::string n = "up" + std::to_string(i);
    const int cin = base << (nd - i + 1), cout = base << (nd - i);
    const int w = add_param("G." + n + ".weight", {cin, cout, 3, 3}, rng, false);
    add_param("G." + n + ".bias", {cout}, rng, true);
    blocks_.push_back({n, Kind::up, w});
  }
  blocks_.push_back({"out", Kind::out, conv("G.out", base, spec_.output_channels, 7)});

  for (const auto& t : spec_.tap_layers) {
    int idx = -1;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].name == t) idx = static_cast<int>(b);
    CUT_REQUIRE(t == "pixels" || idx >= 0, InvalidArgument, "unknown tap layer '" + t + "'");
    tap_block_.push_back(idx);
    encoder_end_ = std::max(encoder_end_, idx);
  }
}

template <class T>
Var<T> Generator<T>::norm(const Var<T>& x) const {
  return spec_.norm == NormKind::instance ? ops::instance_norm<T>(x) : x;
}

template <class T>
Var<T> Generator<T>::run_block(const Block& b, const Var<T>& x, Var<T>* tap) const {
  auto w = [&](int i) { return ag::param<T>(params_[static_cast<std::size_t>(i)]); };
  auto bias = [&](int i) { return ag::param<T>(params_[static_cast<std::size_t>(i + 1)]); };
  switch (b.kind) {
    case Kind::stem: {
      auto y = ops::conv2d<T>(ops::reflection_pad2d<T>(x, 3), w(b.conv_a), bias(b.conv_a), 1, 0);
      y = ops::relu<T>(norm(y));
      if (tap) *tap = y;
      return y;
    }
    case Kind::down: {
      if (spec_.downsample == DownsampleMode::antialiased) {
        auto c = ops::conv2d<T>(x, w(b.conv_a), bias(b.conv_a), 1, 1);
        if (tap) *tap = c;
        return ops::blur_downsample<T>(ops::relu<T>(norm(c)));
      }
      auto c = ops::conv2d<T>(x, w(b.conv_a), bias(b.conv_a), 2, 1);
      if (tap) *tap = c;
      return ops::relu<T>(norm(c));
    }
    case Kind::res: {
      auto y = ops::conv2d<T>(ops::reflection_pad2d<T>(x, 1), w(b.conv_a), bias(b.conv_a), 1, 0);
      y = ops::relu<T>(norm(y));
      y = ops::conv2d<T>(ops::reflection_pad2d<T>(y, 1), w(b.conv_b), bias(b.conv_b), 1, 0);
      y = ops::add<T>(x, norm(y));
      if (tap) *tap = y;
      return y;
    }
    case Kind::up: {
      auto y = ops::conv_transpose2d<T>(x, w(b.conv_a), bias(b.conv_a), 2, 1, 1);
      return ops::relu<T>(norm(y));
    }
    case Kind::out: {
      auto y = ops::conv2d<T>(ops::reflection_pad2d<T>(x, 3), w(b.conv_a), bias(b.conv_a), 1, 0);
      return ops::tanh<T>(y);
    }
  }
  return x;
}

template <class T>
FeatureStack<T> Generator<T>::encode(const Var<T>& image) const {
  CUT_REQUIRE(!blocks_.empty(), InvalidState, "generator is not initialized");
  const auto& s = image.shape();
  CUT_REQUIRE(s.size() == 4 && s[1] == spec_.input_channels, InvalidArgument,
              "generator expects [N," + std::to_string(spec_.input_channels) + ",H,W], got " +
                  shape_str(s));
  const int m = spec_.size_multiple();
  CUT_REQUIRE(s[2] % m == 0 && s[3] % m == 0 && s[2] >= 4 * m && s[3] >= 4 * m, InvalidArgument,
              "image size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                  " must be a multiple of " + std::to_string(m) + " and at least " +
                  std::to_string(4 * m));
  FeatureStack<T> f;
  f.layer_ids = spec_.tap_layers;
  f.taps.resize(spec_.tap_layers.size());
  Var<T> x = image;
  for (int b = 0; b <= encoder_end_; ++b) {
    Var<T> tap;
    const bool wanted =
        std::find(tap_block_.begin(), tap_block_.end(), b) != tap_block_.end();
    x = run_block(blocks_[static_cast<std::size_t>(b)], x, wanted ? &tap : nullptr);
    for (std::size_t t = 0; t < tap_block_.size(); ++t)
      if (tap_block_[t] == b) f.taps[t] = tap;
  }
  for (std::size_t t = 0; t < tap_block_.size(); ++t)
    if (tap_block_[t] < 0) f.taps[t] = image;
  f.deepest = x;
  return f;
}

template <class T>
Var<T> Generator<T>::decode(const FeatureStack<T>& features) const {
  CUT_REQUIRE(features.deepest.defined(), InvalidState, "feature stack has no deepest feature");
  Var<T> x = features.deepest;
  for (std::size_t b = static_cast<std::size_t>(encoder_end_ + 1); b < blocks_.size(); ++b)
    x = run_block(blocks_[b], x, nullptr);
  return x;
}

template <class T>
Var<T> Generator<T>::forward(const Var<T>& image, FeatureStack<T>* taps) const {
  auto f = encode(image);
  auto out = decode(f);
  if (taps) *taps = std::move(f);
  return out;
}

template <class T>
std::vector<int> Generator<T>::tap_channels() const {
  std::vector<int> out;
  for (std::size_t t = 0; t < tap_block_.size(); ++t) {
    const int b = tap_block_[t];
    if (b < 0) {
      out.push_back(spec_.input_channels);
    } else {
      out.push_back(static_cast<int>(params_[static_cast<std::size_t>(blocks_[static_cast<std::size_t>(b)].conv_a)].value.dim(0)));
    }
  }
  return out;
}

template <class T>
std::vector<ag::Parameter<T>*> Generator<T>::parameters() {
  std::vector<ag::Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::vector<const ag::Parameter<T>*> Generator<T>::parameters() const {
  std::vector<const ag::Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::vector<ag::Parameter<T>*> Generator<T>::encoder_parameters() {
  std::vector<ag::Parameter<T>*> out;
  for (int b = 0; b <= encoder_end_; ++b) {
    const auto& blk = blocks_[static_cast<std::size_t>(b)];
    for (int i : {blk.conv_a, blk.conv_b}) {
      if (i < 0) continue;
      out.push_back(&params_[static_cast<std::size_t>(i)]);
      out.push_back(&params_[static_cast<std::size_t>(i + 1)]);
    }
  }
  return out;
}

template <class T>
std::int64_t Generator<T>::parameter_count() const {
  return count_parameters<T>(parameters());
}

// ------------------------------------------------------------ Discriminator

template <class T>
int Discriminator<T>::add_param(const std::string& name, Shape shape, Rng& rng, bool zero) {
  Tensor<T> v = zero ? Tensor<T>(shape) : gaussian<T>(shape, rng, kInitStd);
  params_.emplace_back(name, std::move(v));
  return static_cast<int>(params_.size()) - 1;
}

template <class T>
void Discriminator<T>::add_conv(int cin, int cout, int k, int stride, int pad, Rng& rng) {
  const std::string n = "D.conv" + std::to_string(layers_.size());
  Layer l{Kind::conv};
  l.weight = add_param(n + ".weight", {cout, cin, k, k}, rng, false);
  l.bias = add_param(n + ".bias", {cout}, rng, true);
  l.stride = stride;
  l.pad = pad;
  layers_.push_back(l);
}

template <class T>
Discriminator<T>::Discriminator(DiscriminatorSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.variant == DiscriminatorVariant::linear) {
    add_conv(spec_.input_channels, 1, spec_.tile_size, 1, 0, rng);
    return;
  }
  const int base = spec_.base_width;
  auto width = [&](int i) { return base * std::min(1 << i, 8); };
  add_conv(spec_.input_channels, base, 4, 2, 1, rng);
  layers_.push_back({Kind::lrelu});
  for (int i = 1; i <= spec_.n_layers; ++i) {
    add_conv(width(i - 1), width(i), 4, i < spec_.n_layers ? 2 : 1, 1, rng);
    if (spec_.norm == NormKind::instance) layers_.push_back({Kind::norm});
    layers_.push_back({Kind::lrelu});
  }
  add_conv(width(spec_.n_layers), 1, 4, 1, 1, rng);
}

template <class T>
Var<T> Discriminator<T>::prepare(const Var<T>& x) const {
  const auto& s = x.shape();
  CUT_REQUIRE(s.size() == 4 && s[1] == spec_.input_channels, InvalidArgument,
              "discriminator expects [N," + std::to_string(spec_.input_channels) + ",H,W], got " +
                  shape_str(s));
  switch (spec_.variant) {
    case DiscriminatorVariant::tile64:
      CUT_REQUIRE(s[2] % spec_.tile_size == 0 && s[3] % spec_.tile_size == 0, InvalidArgument,
                  "tile discriminator: " + shape_str(s) + " is not divisible into " +
                      std::to_string(spec_.tile_size) + "-pixel tiles");
      return ops::split_tiles<T>(x, spec_.tile_size);
    case DiscriminatorVariant::linear:
      CUT_REQUIRE(s[2] == spec_.tile_size && s[3] == spec_.tile_size, InvalidArgument,
                  "linear discriminator expects " + std::to_string(spec_.tile_size) + "x" +
                      std::to_string(spec_.tile_size) + " input, got " + shape_str(s));
      return x;
    case DiscriminatorVariant::patchgan:
      return x;
  }
  return x;
}

template <class T>
Var<T> Discriminator<T>::score(const Var<T>& prepared) const {
  CUT_REQUIRE(!layers_.empty(), InvalidState, "discriminator is not initialized");
  Var<T> x = prepared;
  for (const auto& l : layers_) {
    switch (l.kind) {
      case Kind::conv:
        x = ops::conv2d<T>(x, ag::param<T>(params_[static_cast<std::size_t>(l.weight)]),
                           ag::param<T>(params_[static_cast<std::size_t>(l.bias)]), l.stride, l.pad);
        break;
      case Kind::norm: x = ops::instance_norm<T>(x); break;
      case Kind::lrelu: x = ops::leaky_relu<T>(x, T(0.2)); break;
    }
  }
  return x;
}

template <class T>
Var<T> Discriminator<T>::forward(const Var<T>& x) const {
  return score(prepare(x));
}

template <class T>
bool Discriminator<T>::piecewise_linear() const {
  return std::none_of(layers_.begin(), layers_.end(),
                      [](const Layer& l) { return l.kind == Kind::norm; });
}

template <class T>
Var<T> Discriminator<T>::directional_derivative(const Tensor<T>& prepared_x,
                                                const Tensor<T>& direction) const {
  CUT_REQUIRE(piecewise_linear(), InvalidState,
              "input gradient unavailable: discriminator uses normalization layers");
  require_same_shape(prepared_x, direction, "directional_derivative");
  Tensor<T> x = prepared_x;
  Var<T> t = ag::constant<T>(direction);
  for (const auto& l : layers_) {
    if (l.kind == Kind::conv) {
      const auto& wp = params_[static_cast<std::size_t>(l.weight)];
      const auto& bp = params_[static_cast<std::size_t>(l.bias)];
      x = ops::conv2d<T>(ag::constant<T>(x), ag::constant<T>(wp.value), ag::constant<T>(bp.value),
                         l.stride, l.pad)
              .value();
      t = ops::conv2d<T>(t, ag::param<T>(params_[static_cast<std::size_t>(l.weight)]), Var<T>(),
                         l.stride, l.pad);
    } else {
      Tensor<T> mask(x.shape);
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        mask[i] = x[i] > T(0) ? T(1) : T(0.2);
        x[i] *= mask[i];
      }
      t = ops::mul_const<T>(t, mask);
    }
  }
  return ops::per_sample_sum<T>(t);
}

template <class T>
std::vector<ag::Parameter<T>*> Discriminator<T>::parameters() {
  std::vector<ag::Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::vector<const ag::Parameter<T>*> Discriminator<T>::parameters() const {
  std::vector<const ag::Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::int64_t Discriminator<T>::parameter_count() const {
  return count_parameters<T>(parameters());
}

// ---------------------------------------------------------- ProjectionHeads

template <class T>
ProjectionHeads<T>::ProjectionHeads(std::vector<std::string> layer_ids, std::vector<int> in_channels,
                                    int width, Rng& rng, const std::string& prefix)
    : layer_ids_(std::move(layer_ids)), in_channels_(std::move(in_channels)), width_(width) {
  CUT_REQUIRE(layer_ids_.size() == in_channels_.size(), InvalidArgument,
              "projection heads: one channel count per layer required");
  CUT_REQUIRE(width_ >= 1, InvalidArgument, "projection width must be positive");
  for (std::size_t l = 0; l < layer_ids_.size(); ++l) {
    const std::string n = prefix + "." + layer_ids_[l];
    const int c = in_channels_[l];
    // Biases are drawn like weights.
    params_.emplace_back(n + ".fc1.weight", gaussian<T>({width_, c}, rng, kInitStd));
    params_.emplace_back(n + ".fc1.bias", gaussian<T>({width_}, rng, kInitStd));
    params_.emplace_back(n + ".fc2.weight", gaussian<T>({width_, width_}, rng, kInitStd));
    params_.emplace_back(n + ".fc2.bias", gaussian<T>({width_}, rng, kInitStd));
  }
}

template <class T>
Var<T> ProjectionHeads<T>::project_layer(std::size_t layer, const Var<T>& feature_map,
                                         const std::vector<std::int64_t>& positions) const {
  CUT_REQUIRE(layer < layer_ids_.size(), InvalidArgument, "projection head index out of range");
  CUT_REQUIRE(feature_map.value().rank() == 4 && feature_map.dim(1) == in_channels_[layer],
              InvalidArgument,
              "projection head '" + layer_ids_[layer] + "' expects " +
                  std::to_string(in_channels_[layer]) + " channels, got " +
                  shape_str(feature_map.shape()));
  auto p = [&](std::size_t i) { return ag::param<T>(params_[layer * 4 + i]); };
  auto x = ops::gather_positions<T>(feature_map, positions);
  x = ops::relu<T>(ops::linear<T>(x, p(0), p(1)));
  x = ops::linear<T>(x, p(2), p(3));
  return ops::l2_normalize_rows<T>(x);
}

template <class T>
std::vector<Var<T>> ProjectionHeads<T>::project(
    const FeatureStack<T>& features, const std::vector<std::vector<std::int64_t>>& positions) const {
  CUT_REQUIRE(features.taps.size() == layer_ids_.size() && positions.size() == layer_ids_.size(),
              InvalidArgument, "projection: tap/index count does not match heads");
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l < layer_ids_.size(); ++l) {
    CUT_REQUIRE(features.layer_ids[l] == layer_ids_[l], InvalidArgument,
                "projection: tap '" + features.layer_ids[l] + "' does not match head '" +
                    layer_ids_[l] + "'");
    out.push_back(project_layer(l, features.taps[l], positions[l]));
  }
  return out;
}

template <class T>
std::vector<ag::Parameter<T>*> ProjectionHeads<T>::parameters() {
  std::vector<ag::Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::vector<const ag::Parameter<T>*> ProjectionHeads<T>::parameters() const {
  std::vector<const ag::Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::int64_t ProjectionHeads<T>::parameter_count() const {
  return count_parameters<T>(parameters());
}

template <class T>
std::uint64_t parameter_hash(const std::vector<const ag::Parameter<T>*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.ptr());
    const std::size_t n = p->value.data.size() * sizeof(T);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

template <class T>
std::int64_t count_parameters(const std::vector<const ag::Parameter<T>*>& params) {
  std::int64_t n = 0;
  for (const auto* p : params) n += p->value.numel();
  return n;
}

#define CUT_NET_INSTANTIATE(T)                                                              \
  template class Generator<T>;                                                              \
  template class Discriminator<T>;                                                          \
  template class ProjectionHeads<T>;                                                        \
  template std::uint64_t parameter_hash<T>(const std::vector<const ag::Parameter<T>*>&);    \
  template std::int64_t count_parameters<T>(const std::vector<const ag::Parameter<T>*>&);

CUT_NET_INSTANTIATE(float)
CUT_NET_INSTANTIATE(double)

}  // namespace cut::net
