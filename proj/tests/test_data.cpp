#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "cut/data.hpp"
#include "cut/synthetic.hpp"
#include "support.hpp"

using namespace cut;
using namespace cut::data;
using cut::testing::ScratchDir;

TEST_CASE("index sampling is reproducible for a fixed seed") {
  Rng rng(17);
  CHECK(sample_layer_indices(64, 4, rng) == std::vector<std::int64_t>{59, 22, 13, 38});
  const auto per_layer = IndexSampler(4).sample({{8, 8}, {4, 4}}, rng);
  CHECK(per_layer == std::vector<std::vector<std::int64_t>>{{10, 20, 59, 26}, {14, 10, 2, 8}});
}

TEST_CASE("index sampling is without replacement and covers small layers") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = sample_layer_indices(50, 20, rng);
    CHECK(std::set<std::int64_t>(v.begin(), v.end()).size() == 20);
    CHECK(*std::max_element(v.begin(), v.end()) < 50);
  }
  CHECK(sample_layer_indices(5, 9, rng) == std::vector<std::int64_t>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(sample_layer_indices(0, 3, rng), InvalidArgument);
}

TEST_CASE("flip is an involution and unflip undoes it on every tap") {
  Rng rng(4);
  const auto x = cut::testing::random_tensor<float>({2, 3, 5, 7}, rng);
  const auto f = flip_equivariance_transform(true, x);
  CHECK(f.data != x.data);
  CHECK(flip_equivariance_transform(true, f).data == x.data);
  CHECK(flip_equivariance_transform(false, x).data == x.data);
  CHECK(f.at(1, 2, 3, 0) == x.at(1, 2, 3, 6));
  net::FeatureStack<float> stack;
  stack.layer_ids = {"pixels"};
  stack.taps = {ag::constant(f)};
  const auto u = unflip_features(stack);
  CHECK(u.taps[0].value().data == x.data);
}

TEST_CASE("loader draws are a pure function of seed and iteration") {
  ScratchDir dir("data");
  synth::write_dataset(dir.path, 6, 2, 32, 5);
  auto ds = UnpairedDataset::from_directory(dir.path);
  CHECK(ds.domain_x.size() == 6);
  CHECK(ds.epoch_length() == 6);
  ds.load_size = 36;
  ds.crop_size = 32;
  BatchLoader a(ds, 9), b(ds, 9), c(ds, 10);
  const auto late = a.next_batch(13);
  a.next_batch(0);
  CHECK(b.next_batch(13).x.data == late.x.data);
  CHECK(a.next_batch(13).y.data == late.y.data);
  CHECK(late.x.shape == Shape{1, 3, 32, 32});
  std::set<std::int64_t> epoch;
  for (int t = 0; t < 6; ++t) epoch.insert(a.file_index(0, t));
  CHECK(epoch.size() == 6);
  bool differs = false;
  for (int t = 0; t < 6; ++t) differs |= a.file_index(0, t) != c.file_index(0, t);
  CHECK(differs);
  CHECK(ds.fingerprint() == UnpairedDataset::from_directory(dir.path).fingerprint());
}

TEST_CASE("unreadable files are skipped with a warning") {
  ScratchDir dir("skip");
  synth::write_dataset(dir.path, 2, 1, 16, 1);
  std::ofstream(dir.path / "trainA" / "zz_broken.png") << "not a png";
  auto ds = UnpairedDataset::from_directory(dir.path);
  ds.load_size = ds.crop_size = 16;
  REQUIRE(ds.domain_x.size() == 3);
  int warnings = 0;
  BatchLoader loader(ds, 0, [&](const std::string&) { ++warnings; });
  for (int t = 0; t < 6; ++t) CHECK(loader.next_batch(t).x.shape == Shape{1, 3, 16, 16});
  CHECK(warnings == 1);
}

TEST_CASE("manifest order and empty domains") {
  ScratchDir dir("manifest");
  synth::write_dataset(dir.path, 3, 1, 16, 2);
  std::ofstream(dir.path / "manifest.json")
      << R"({"trainA": ["trainA/)" << img::list_images(dir.path / "trainA")[2].filename().string()
      << R"("], "trainB": []})";
  auto ds = UnpairedDataset::from_directory(dir.path);
  CHECK(ds.domain_x.size() == 1);
  CHECK_THROWS_AS(ds.validate(), InvalidState);
}

TEST_CASE("single-image crops") {
  Rng rng(5);
  const auto src = cut::testing::random_tensor<float>({1, 3, 100, 200}, rng);
  const auto dst = cut::testing::random_tensor<float>({1, 3, 50, 100}, rng);
  SingleImageBatchSpec spec;
  spec.scale_width_min = 150;
  spec.scale_width_max = 180;
  spec.crops_per_iteration = 5;
  spec.crop_size = 64;
  spec.tile_size = 32;
  const auto b = single_image_batch(src, dst, spec, rng);
  CHECK(b.source.shape == Shape{5, 3, 64, 64});
  CHECK(b.target.shape == Shape{5, 3, 64, 64});
  CHECK(b.scaled_width >= 150);
  CHECK(b.scaled_width <= 180);
  CHECK(b.source_size.second == b.scaled_width);
  CHECK(b.source_origins.size() == 5);
  spec.tile_size = 48;
  CHECK_THROWS_AS(single_image_batch(src, dst, spec, rng), InvalidArgument);
  spec.tile_size = 32;
  spec.scale_width_min = spec.scale_width_max = 64;
  CHECK_THROWS_AS(single_image_batch(src, dst, spec, rng), InvalidArgument);
}

TEST_CASE("synthetic images depend only on seed, domain and index") {
  const auto a = synth::generate(0, 3, 32, 7);
  const auto b = synth::generate(0, 1, 32, 7, 2);
  CHECK(a[2].data == b[0].data);
  const auto y = synth::generate(1, 1, 32, 7, 2);
  CHECK(y[0].data != b[0].data);
  for (float v : a[0].data) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}
