#include <doctest.h>

#include "cut/ops.hpp"
#include "support.hpp"

using namespace cut;
using cut::testing::gradcheck_inputs;
using cut::testing::random_tensor;
using V = ag::Var<double>;
using Vs = std::vector<V>;

namespace {

// Projects an arbitrary-shaped output to a scalar with fixed random weights.
V project(const V& y, std::uint64_t seed = 77) {
  Rng rng(seed);
  return ops::sum<double>(ops::mul_const<double>(y, random_tensor<double>(y.shape(), rng)));
}

}  // namespace

TEST_CASE("elementwise ops") {
  Rng rng(1);
  const auto a = random_tensor<double>({2, 3}, rng), b = random_tensor<double>({2, 3}, rng);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::add<double>(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::sub<double>(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::mul<double>(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::scale<double>(v[0], 2.5)); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return ops::mean<double>(v[0]); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::tanh<double>(v[0])); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::relu<double>(v[0])); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::leaky_relu<double>(v[0], 0.2)); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return ops::mse_const<double>(v[0], 1.0); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return ops::softplus_mean<double>(v[0], -1.0); }, {a}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::per_sample_sum<double>(v[0])); }, {a}) < 1e-7);
  CHECK_THROWS_AS(ops::add<double>(ag::constant(a), ag::constant(Tensor<double>({3, 2}))), InvalidArgument);
}

TEST_CASE("detach and straight-through") {
  Rng rng(2);
  const auto a = random_tensor<double>({4}, rng);
  auto x = ag::input<double>(a, true);
  auto y = ops::add<double>(ops::detach<double>(x), ops::scale<double>(x, 2.0));
  ag::backward(ops::sum<double>(y));
  for (double g : x.grad().data) CHECK(g == 2.0);
  auto x2 = ag::input<double>(a, true);
  auto s = ops::straight_through<double>(Tensor<double>({4}, 5.0), x2);
  CHECK(s.value()[0] == 5.0);
  ag::backward(ops::sum<double>(ops::scale<double>(s, 3.0)));
  for (double g : x2.grad().data) CHECK(g == 3.0);
}

TEST_CASE("convolutions") {
  Rng rng(3);
  const auto x = random_tensor<double>({2, 3, 6, 5}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      CAPTURE(stride);
      CAPTURE(pad);
      const auto w = random_tensor<double>({4, 3, 3, 3}, rng), b = random_tensor<double>({4}, rng);
      CHECK(gradcheck_inputs([&](const Vs& v) { return project(ops::conv2d<double>(v[0], v[1], v[2], stride, pad)); },
                             {x, w, b}) < 1e-7);
    }
  const auto wt = random_tensor<double>({3, 2, 3, 3}, rng), bt = random_tensor<double>({2}, rng);
  CHECK(gradcheck_inputs(
            [](const Vs& v) { return project(ops::conv_transpose2d<double>(v[0], v[1], v[2], 2, 1, 1)); },
            {x, wt, bt}) < 1e-7);
  const auto y = ops::conv_transpose2d<double>(ag::constant(x), ag::constant(wt), ag::constant(bt), 2, 1, 1);
  CHECK(y.shape() == Shape{2, 2, 12, 10});
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  Rng rng(4);
  const auto x = random_tensor<double>({1, 3, 8, 8}, rng);
  const auto w = random_tensor<double>({5, 3, 3, 3}, rng);
  const auto y = ops::conv2d<double>(ag::constant(x), ag::constant(w), V(), 2, 1);
  const auto u = random_tensor<double>(y.shape(), rng);
  const auto wt = w;  // [Cout=5, Cin=3] read as [Cin', Cout'] for the transpose
  const auto z = ops::conv_transpose2d<double>(ag::constant(u), ag::constant(wt), V(), 2, 1, 1);
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < y.value().numel(); ++i) lhs += y.value()[i] * u[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * z.value()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("normalization, padding and resampling") {
  Rng rng(5);
  const auto x = random_tensor<double>({2, 2, 6, 6}, rng);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::instance_norm<double>(v[0])); }, {x}) < 1e-6);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::reflection_pad2d<double>(v[0], 2)); }, {x}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::blur_downsample<double>(v[0])); }, {x}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::flip_width<double>(v[0])); }, {x}) < 1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::split_tiles<double>(v[0], 3)); }, {x}) < 1e-7);
  const auto p = ops::reflection_pad2d<double>(ag::constant(x), 1);
  CHECK(p.value().at(0, 0, 0, 0) == x.at(0, 0, 1, 1));
  CHECK(ops::blur_downsample<double>(ag::constant(x)).shape() == Shape{2, 2, 3, 3});
  const auto n = ops::instance_norm<double>(ag::constant(x)).value();
  double mean = 0;
  for (int i = 0; i < 36; ++i) mean += n[i];
  CHECK(std::abs(mean / 36) < 1e-12);
}

TEST_CASE("gather, linear and row normalization") {
  Rng rng(6);
  const auto x = random_tensor<double>({2, 3, 4, 4}, rng);
  const std::vector<std::int64_t> pos = {0, 5, 15};
  const auto g = ops::gather_positions<double>(ag::constant(x), pos);
  CHECK(g.shape() == Shape{6, 3});
  CHECK(g.value()[3 * 3 + 1] == x.at(1, 1, 0, 0));
  CHECK(g.value()[1 * 3 + 2] == x.at(0, 2, 1, 1));
  CHECK(gradcheck_inputs([&](const Vs& v) { return project(ops::gather_positions<double>(v[0], pos)); }, {x}) < 1e-7);
  const auto a = random_tensor<double>({5, 3}, rng), w = random_tensor<double>({4, 3}, rng),
             b = random_tensor<double>({4}, rng);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::linear<double>(v[0], v[1], v[2])); }, {a, w, b}) <
        1e-7);
  CHECK(gradcheck_inputs([](const Vs& v) { return project(ops::l2_normalize_rows<double>(v[0])); }, {a}) < 1e-7);
  const auto nrm = ops::l2_normalize_rows<double>(ag::constant(a)).value();
  double s = 0;
  for (int j = 0; j < 3; ++j) s += nrm[j] * nrm[j];
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(ops::gather_positions<double>(ag::constant(x), {16}), InvalidArgument);
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(7);
  const std::int64_t c = 2, h = 5, w = 6, ho = 3, wo = 3;
  const int k = 3, stride = 2, pad = 1;
  const auto x = random_tensor<double>({c, h, w}, rng);
  std::vector<double> col(static_cast<std::size_t>(c * k * k * ho * wo));
  ops::im2col(x.ptr(), c, h, w, k, stride, pad, ho, wo, col.data());
  const auto u = random_tensor<double>({c * k * k * ho * wo}, rng);
  std::vector<double> back(static_cast<std::size_t>(c * h * w), 0.0);
  ops::col2im(u.ptr(), c, h, w, k, stride, pad, ho, wo, back.data());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < col.size(); ++i) lhs += col[i] * u[static_cast<std::int64_t>(i)];
  for (std::size_t i = 0; i < back.size(); ++i) rhs += back[i] * x[static_cast<std::int64_t>(i)];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root and reports missing gradients") {
  auto x = ag::input<double>(Tensor<double>({2}, 1.0), true);
  CHECK_THROWS_AS(ag::backward(x), InvalidArgument);
  auto c = ag::constant<double>(Tensor<double>({1}, 1.0));
  auto y = ag::input<double>(Tensor<double>({1}, 1.0), true);
  ag::backward(ops::sum<double>(ops::mul<double>(y, c)));
  CHECK_THROWS_AS(c.grad(), InvalidState);
}
