#include <doctest.h>

#include <set>

#include "cut/networks.hpp"
#include "cut/ops.hpp"
#include "support.hpp"

using namespace cut;
using namespace cut::net;

namespace {

GeneratorSpec small_spec(DownsampleMode m = DownsampleMode::antialiased) {
  auto s = GeneratorSpec::resnet9();
  s.base_width = 4;
  s.downsample = m;
  return s;
}

}  // namespace

TEST_CASE("tap receptive fields and sizes") {
  const auto s = GeneratorSpec::resnet9();
  CHECK(tap_receptive_fields(s) == std::vector<int>{1, 9, 15, 35, 99});
  using P = std::pair<std::int64_t, std::int64_t>;
  auto strided = s;
  strided.downsample = DownsampleMode::strided;
  CHECK(tap_spatial_sizes(strided, 256, 256) == std::vector<P>{{256, 256}, {128, 128}, {64, 64}, {64, 64}, {64, 64}});
  CHECK(tap_spatial_sizes(s, 256, 256) == std::vector<P>{{256, 256}, {256, 256}, {128, 128}, {64, 64}, {64, 64}});
  CHECK_THROWS_AS(tap_spatial_sizes(s, 254, 256), InvalidArgument);
}

TEST_CASE("tap sizes agree with the encoder") {
  for (auto mode : {DownsampleMode::antialiased, DownsampleMode::strided}) {
    Rng rng(1);
    const auto spec = small_spec(mode);
    Generator<float> g(spec, rng);
    const auto f = g.encode(ag::constant(Tensor<float>({1, 3, 32, 24}, 0.1f)));
    const auto sizes = tap_spatial_sizes(spec, 32, 24);
    REQUIRE(f.taps.size() == sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      CHECK(f.taps[i].dim(2) == sizes[i].first);
      CHECK(f.taps[i].dim(3) == sizes[i].second);
    }
    const auto ch = g.tap_channels();
    CHECK(ch == std::vector<int>{3, 8, 16, 16, 16});
  }
}

TEST_CASE("the pixel tap is the input itself") {
  Rng rng(2);
  Generator<float> g(small_spec(), rng);
  const auto x = cut::testing::random_tensor<float>({2, 3, 16, 16}, rng);
  const auto f = g.encode(ag::constant(x));
  CHECK(f.taps[0].value().data == x.data);
}

TEST_CASE("generator output shape and range") {
  Rng rng(3);
  Generator<float> g(small_spec(), rng);
  const auto x = cut::testing::random_tensor<float>({1, 3, 20, 28}, rng, 3.0);
  const auto y = g.forward(ag::constant(x)).value();
  CHECK(y.shape == x.shape);
  for (float v : y.data) CHECK((v >= -1.f && v <= 1.f));
  CHECK_THROWS_AS(g.forward(ag::constant(Tensor<float>({1, 3, 18, 16}))), InvalidArgument);
  CHECK_THROWS_AS(g.forward(ag::constant(Tensor<float>({1, 1, 16, 16}))), InvalidArgument);
  FeatureStack<float> empty;
  CHECK_THROWS_AS(g.decode(empty), InvalidState);
}

TEST_CASE("single-image generator layout") {
  Rng rng(4);
  auto spec = GeneratorSpec::singleimage();
  spec.base_width = 4;
  Generator<float> g(spec, rng);
  CHECK(spec.n_downsampling() == 1);
  std::set<std::string> names;
  for (const auto* p : g.parameters()) names.insert(p->name);
  CHECK(std::any_of(names.begin(), names.end(), [](const std::string& n) { return n.rfind("G.res6", 0) == 0; }));
  CHECK(std::none_of(names.begin(), names.end(), [](const std::string& n) { return n.rfind("G.res7", 0) == 0; }));
  CHECK(std::none_of(names.begin(), names.end(), [](const std::string& n) { return n.rfind("G.down2", 0) == 0; }));
  const auto y = g.forward(ag::constant(Tensor<float>({1, 3, 12, 12}, 0.2f)));
  CHECK(y.shape() == Shape{1, 3, 12, 12});
}

TEST_CASE("spec validation and json round trip") {
  auto s = GeneratorSpec::resnet9();
  s.tap_layers = {"pixels", "res10"};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.tap_layers = {"pixels", "pixels"};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.tap_layers = {"down3"};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  auto g = small_spec(DownsampleMode::strided);
  const auto g2 = generator_spec_from_json(to_json(g));
  CHECK(to_json(g2) == to_json(g));
  const auto d = DiscriminatorSpec::tile64();
  CHECK(to_json(discriminator_spec_from_json(to_json(d))) == to_json(d));
  CHECK_THROWS_AS(parse_norm("batch"), InvalidArgument);
}

TEST_CASE("projection heads") {
  Rng rng(5);
  const auto spec = small_spec();
  Generator<float> g(spec, rng);
  ProjectionHeads<float> h(spec.tap_layers, g.tap_channels(), 8, rng);
  CHECK(h.parameters().size() == 4 * spec.tap_layers.size());

  SUBCASE("a constant map gives identical unit rows") {
    const auto zero = ag::constant(Tensor<float>({1, 8, 6, 6}, 0.f));
    const auto e = h.project_layer(1, zero, {0, 7, 20}).value();
    for (int r = 0; r < 3; ++r) {
      double dot = 0;
      for (int k = 0; k < 8; ++k) dot += double(e[r * 8 + k]) * e[k];
      CHECK(dot == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("same features, same indices, same heads: identical embeddings") {
    const auto x = cut::testing::random_tensor<float>({2, 3, 16, 16}, rng);
    const auto fa = g.encode(ag::constant(x)), fb = g.encode(ag::constant(x));
    const std::vector<std::vector<std::int64_t>> pos = {{1, 2}, {3, 4}, {0, 5}, {1, 2}, {7, 8}};
    const auto a = h.project(fa, pos), b = h.project(fb, pos);
    for (std::size_t l = 0; l < a.size(); ++l) {
      CHECK(a[l].value().data == b[l].value().data);
      CHECK(a[l].shape() == Shape{4, 8});
    }
  }
  SUBCASE("layer mismatch") {
    FeatureStack<float> f;
    f.layer_ids = {"pixels"};
    f.taps = {ag::constant(Tensor<float>({1, 3, 4, 4}))};
    CHECK_THROWS_AS(h.project(f, {{0}}), InvalidArgument);
  }
}

TEST_CASE("discriminators") {
  Rng rng(6);
  auto ds = DiscriminatorSpec::patchgan();
  ds.base_width = 4;
  CHECK(discriminator_receptive_field(ds) == 70);
  Discriminator<float> d(ds, rng);
  const auto x = cut::testing::random_tensor<float>({2, 3, 64, 64}, rng);
  const auto s1 = d.forward(ag::constant(x)).value(), s2 = d.forward(ag::constant(x)).value();
  CHECK(s1.data == s2.data);
  CHECK(s1.shape == Shape{2, 1, 6, 6});
  CHECK_FALSE(d.piecewise_linear());

  auto ts = DiscriminatorSpec::tile64();
  ts.base_width = 4;
  Discriminator<float> t(ts, rng);
  CHECK(t.piecewise_linear());
  const auto crop = cut::testing::random_tensor<float>({1, 3, 128, 128}, rng);
  CHECK(t.prepare(ag::constant(crop)).shape() == Shape{4, 3, 64, 64});
  CHECK(t.forward(ag::constant(crop)).dim(0) == 4);
  CHECK_THROWS_AS(t.prepare(ag::constant(Tensor<float>({1, 3, 96, 128}))), InvalidArgument);
}

TEST_CASE("directional derivative matches finite differences") {
  Rng rng(7);
  DiscriminatorSpec s = DiscriminatorSpec::patchgan();
  s.base_width = 2;
  s.n_layers = 2;
  s.norm = NormKind::none;
  Discriminator<double> d(s, rng);
  const auto x = cut::testing::random_tensor<double>({2, 3, 32, 32}, rng);
  const auto dir = cut::testing::random_tensor<double>({2, 3, 32, 32}, rng);
  const auto dd = d.directional_derivative(x, dir).value();
  const double eps = 1e-6;
  auto shifted = [&](double e) {
    auto y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += e * dir.data[i];
    return ops::per_sample_sum<double>(d.score(ag::constant(y))).value();
  };
  const auto p = shifted(eps), m = shifted(-eps);
  for (int n = 0; n < 2; ++n) CHECK(dd[n] == doctest::Approx((p[n] - m[n]) / (2 * eps)).epsilon(1e-6));
  DiscriminatorSpec withnorm = s;
  withnorm.norm = NormKind::instance;
  Discriminator<double> dn(withnorm, rng);
  CHECK_THROWS_AS(dn.directional_derivative(x, dir), InvalidState);
}

TEST_CASE("parameter hashing") {
  Rng r1(8), r2(8);
  Generator<float> a(small_spec(), r1), b(small_spec(), r2);
  const auto& ca = a;
  const auto& cb = b;
  CHECK(parameter_hash<float>(ca.parameters()) == parameter_hash<float>(cb.parameters()));
  b.parameters()[0]->value.data[0] += 1.f;
  CHECK(parameter_hash<float>(ca.parameters()) != parameter_hash<float>(cb.parameters()));
  CHECK(count_parameters<float>(ca.parameters()) == a.parameter_count());
}
