#pragma once

// Procedural two-domain task: X holds flat gray ellipses on a noise
// background; Y holds ellipses drawn from the same geometry distribution,
// filled with a stripe texture.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cut/image.hpp"
#include "cut/rng.hpp"

namespace cut::synth {

struct EllipseGeometry {
  double cy = 0, cx = 0;  // center, pixels
  double ry = 0, rx = 0;  // radii, pixels
  double angle = 0;       // radians
};

EllipseGeometry random_geometry(Rng& rng, int size);

/// Domain X (domain = 0) or Y (domain = 1) image of the given geometry.
img::Image render(int domain, const EllipseGeometry& g, int size, Rng& rng);

/// `count` images of one domain; image i depends only on (seed, domain, i).
std::vector<img::Image> generate(int domain, int count, int size, std::uint64_t seed,
                                 std::int64_t first_index = 0);

/// Writes {train,test}{A,B} PNG folders under `root`.
void write_dataset(const std::filesystem::path& root, int n_train, int n_test, int size,
                   std::uint64_t seed);

}  // namespace cut::synth
