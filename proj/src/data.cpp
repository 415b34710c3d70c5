#include "cut/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "cut/ops.hpp"

namespace cut::data {

namespace {

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace

UnpairedDataset UnpairedDataset::from_directory(const fs::path& root, const std::string& split) {
  UnpairedDataset ds;
  const fs::path manifest = root / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("cannot parse " + manifest.string() + ": " + e.what());
    }
    for (const auto& [key, out] : {std::pair{split + "A", &ds.domain_x}, std::pair{split + "B", &ds.domain_y}}) {
      CUT_REQUIRE(j.contains(key) && j[key].is_array(), InvalidArgument,
                  manifest.string() + " has no list '" + key + "'");
      for (const auto& f : j[key]) out->push_back(root / f.get<std::string>());
    }
  } else {
    ds.domain_x = img::list_images(root / (split + "A"));
    ds.domain_y = img::list_images(root / (split + "B"));
  }
  return ds;
}

std::int64_t UnpairedDataset::epoch_length() const {
  return static_cast<std::int64_t>(std::max(domain_x.size(), domain_y.size()));
}

std::pair<std::int64_t, std::uint64_t> UnpairedDataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::int64_t count = 0;
  for (const auto* domain : {&domain_x, &domain_y}) {
    for (const auto& p : *domain) {
      const std::string name = p.filename().string();
      h = fnv(h, name.data(), name.size());
      std::ifstream in(p, std::ios::binary);
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      h = fnv(h, bytes.data(), bytes.size());
      ++count;
    }
    h = fnv(h, "|", 1);
  }
  return {count, h};
}

void UnpairedDataset::validate() const {
  CUT_REQUIRE(!domain_x.empty(), InvalidState, "domain X has no images");
  CUT_REQUIRE(!domain_y.empty(), InvalidState, "domain Y has no images");
  CUT_REQUIRE(crop_size >= 1 && load_size >= crop_size, InvalidArgument,
              "load_size must be >= crop_size >= 1");
}

BatchLoader::BatchLoader(UnpairedDataset ds, std::uint64_t seed, WarnFn warn)
    : ds_(std::move(ds)), seed_(seed), warn_(std::move(warn)) {
  ds_.validate();
}

std::int64_t BatchLoader::file_index(int domain, std::int64_t iteration) const {
  const auto& files = domain == 0 ? ds_.domain_x : ds_.domain_y;
  const auto n = static_cast<std::int64_t>(files.size());
  const std::int64_t cycle = iteration / n;
  Rng rng(derive_seed(seed_, streams::data, static_cast<std::uint64_t>(domain),
                      static_cast<std::uint64_t>(cycle)));
  return permutation(n, rng)[static_cast<std::size_t>(iteration % n)];
}

Image BatchLoader::load_domain(int domain, std::int64_t iteration) {
  const auto& files = domain == 0 ? ds_.domain_x : ds_.domain_y;
  const auto n = static_cast<std::int64_t>(files.size());
  const std::int64_t first = file_index(domain, iteration);
  for (std::int64_t k = 0; k < n; ++k) {
    const auto& path = files[static_cast<std::size_t>((first + k) % n)];
    auto it = cache_.find(path);
    if (it == cache_.end()) {
      std::optional<Image> im;
      try {
        im = img::load(path);
      } catch (const std::exception& e) {
        if (warn_) warn_("skipping unreadable image: " + std::string(e.what()));
      }
      it = cache_.emplace(path, std::move(im)).first;
    }
    if (it->second) return *it->second;
  }
  throw InvalidState(std::string("no readable image in domain ") + (domain == 0 ? "X" : "Y"));
}

Image BatchLoader::augment(const Image& im, Rng& rng) const {
  Image out = img::resize_bilinear(im, ds_.load_size, ds_.load_size);
  const auto range = static_cast<std::uint64_t>(ds_.load_size - ds_.crop_size + 1);
  const auto top = static_cast<std::int64_t>(uniform_index(rng, range));
  const auto left = static_cast<std::int64_t>(uniform_index(rng, range));
  out = img::crop(out, top, left, ds_.crop_size, ds_.crop_size);
  const bool mirror = uniform_index(rng, 2) == 1;
  if (ds_.flip && mirror) out = flip_equivariance_transform(true, out);
  for (auto& v : out.data) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

Batch BatchLoader::next_batch(std::int64_t iteration) {
  CUT_REQUIRE(iteration >= 0, InvalidArgument, "iteration must be >= 0");
  Batch b;
  for (int d = 0; d < 2; ++d) {
    Rng rng(derive_seed(seed_, streams::data, 16 + static_cast<std::uint64_t>(d),
                        static_cast<std::uint64_t>(iteration)));
    Image im = augment(load_domain(d, iteration), rng);
    (d == 0 ? b.x : b.y) = std::move(im);
  }
  return b;
}

std::vector<std::int64_t> sample_layer_indices(std::int64_t positions, std::int64_t count, Rng& rng) {
  CUT_REQUIRE(positions >= 1 && count >= 1, InvalidArgument, "index sampling needs positive sizes");
  std::vector<std::int64_t> p(static_cast<std::size_t>(positions));
  std::iota(p.begin(), p.end(), 0);
  if (count >= positions) return p;
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::int64_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(positions - i)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  p.resize(static_cast<std::size_t>(count));
  return p;
}

std::vector<std::vector<std::int64_t>> IndexSampler::sample(
    const std::vector<std::pair<std::int64_t, std::int64_t>>& layer_shapes, Rng& rng) const {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& [h, w] : layer_shapes) out.push_back(sample_layer_indices(h * w, patches_, rng));
  return out;
}

template <class T>
Tensor<T> flip_equivariance_transform(bool apply, const Tensor<T>& image) {
  if (!apply) return image;
  return ops::flip_width<T>(ag::constant<T>(image)).value();
}

template <class T>
net::FeatureStack<T> unflip_features(const net::FeatureStack<T>& features) {
  net::FeatureStack<T> out = features;
  for (auto& t : out.taps) t = ops::flip_width<T>(t);
  return out;
}

void SingleImageBatchSpec::validate() const {
  CUT_REQUIRE(scale_width_min >= 1 && scale_width_max >= scale_width_min, InvalidArgument,
              "scale width range must be non-empty");
  CUT_REQUIRE(crops_per_iteration >= 1, InvalidArgument, "crops_per_iteration must be >= 1");
  CUT_REQUIRE(crop_size >= 1 && tile_size >= 1 && crop_size % tile_size == 0, InvalidArgument,
              "crop_size must be a positive multiple of tile_size");
}

Image scale_to_width(const Image& image, std::int64_t width) {
  CUT_REQUIRE(image.rank() == 4, InvalidArgument, "scale_to_width expects NCHW");
  const double aspect = static_cast<double>(image.dim(2)) / static_cast<double>(image.dim(3));
  const auto h = std::max<std::int64_t>(1, std::llround(aspect * static_cast<double>(width)));
  return img::resize_bilinear(image, h, width);
}

SingleImageBatch single_image_batch(const Image& source, const Image& target,
                                    const SingleImageBatchSpec& spec, Rng& rng) {
  spec.validate();
  SingleImageBatch b;
  const auto span = static_cast<std::uint64_t>(spec.scale_width_max - spec.scale_width_min + 1);
  b.scaled_width = spec.scale_width_min + static_cast<std::int64_t>(uniform_index(rng, span));
  const std::int64_t c = spec.crop_size;
  for (int which = 0; which < 2; ++which) {
    const Image scaled = scale_to_width(which == 0 ? source : target, b.scaled_width);
    const std::int64_t h = scaled.dim(2), w = scaled.dim(3);
    CUT_REQUIRE(h >= c && w >= c, InvalidArgument,
                "image scaled to " + std::to_string(h) + "x" + std::to_string(w) +
                    " is smaller than the " + std::to_string(c) + "-pixel crop");
    Image crops({spec.crops_per_iteration, scaled.dim(1), c, c});
    auto& origins = which == 0 ? b.source_origins : b.target_origins;
    const std::int64_t plane = scaled.dim(1) * c * c;
    for (int k = 0; k < spec.crops_per_iteration; ++k) {
      const auto top = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(h - c + 1)));
      const auto left = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(w - c + 1)));
      const Image one = img::crop(scaled, top, left, c, c);
      std::copy(one.data.begin(), one.data.end(), crops.data.begin() + k * plane);
      origins.emplace_back(top, left);
    }
    (which == 0 ? b.source_size : b.target_size) = {h, w};
    (which == 0 ? b.source : b.target) = std::move(crops);
  }
  return b;
}

template Tensor<float> flip_equivariance_transform<float>(bool, const Tensor<float>&);
template Tensor<double> flip_equivariance_transform<double>(bool, const Tensor<double>&);
template net::FeatureStack<float> unflip_features<float>(const net::FeatureStack<float>&);
template net::FeatureStack<double> unflip_features<double>(const net::FeatureStack<double>&);

}  // namespace cut::data
