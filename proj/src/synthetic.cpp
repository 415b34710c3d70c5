#include "cut/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cut::synth {

namespace fs = std::filesystem;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kSynthStream = 101;
}  // namespace

EllipseGeometry random_geometry(Rng& rng, int size) {
  const double s = size;
  EllipseGeometry g;
  g.ry = s * (0.15 + 0.15 * uniform01(rng));
  g.rx = s * (0.15 + 0.15 * uniform01(rng));
  const double margin = std::max(g.rx, g.ry) + 2;
  g.cy = margin + (s - 2 * margin) * uniform01(rng);
  g.cx = margin + (s - 2 * margin) * uniform01(rng);
  g.angle = kPi * uniform01(rng);
  return g;
}

img::Image render(int domain, const EllipseGeometry& g, int size, Rng& rng) {
  img::Image out({1, 3, size, size});
  const double ca = std::cos(g.angle), sa = std::sin(g.angle);
  const double period = 5.0 + 3.0 * uniform01(rng);
  const double theta = kPi * uniform01(rng);
  const double phase = 2 * kPi * uniform01(rng);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double dy = i + 0.5 - g.cy, dx = j + 0.5 - g.cx;
      const double u = (dx * ca + dy * sa) / g.rx, v = (-dx * sa + dy * ca) / g.ry;
      double val = -0.4 + 0.25 * standard_normal(rng);
      if (u * u + v * v <= 1.0) {
        if (domain == 0) {
          val = 0.3;
        } else {
          const double t = (j * std::cos(theta) + i * std::sin(theta)) * 2 * kPi / period + phase;
          val = std::sin(t) >= 0 ? 0.9 : -0.9;
        }
      }
      const float f = static_cast<float>(std::clamp(val, -1.0, 1.0));
      for (int c = 0; c < 3; ++c) out.at(0, c, i, j) = f;
    }
  }
  return out;
}

std::vector<img::Image> generate(int domain, int count, int size, std::uint64_t seed,
                                 std::int64_t first_index) {
  std::vector<img::Image> out;
  for (int k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, kSynthStream, static_cast<std::uint64_t>(domain),
                        static_cast<std::uint64_t>(first_index + k)));
    const auto g = random_geometry(rng, size);
    out.push_back(render(domain, g, size, rng));
  }
  return out;
}

void write_dataset(const fs::path& root, int n_train, int n_test, int size, std::uint64_t seed) {
  for (int domain = 0; domain < 2; ++domain) {
    const std::string suffix = domain == 0 ? "A" : "B";
    const auto train = generate(domain, n_train, size, seed, 0);
    const auto test = generate(domain, n_test, size, seed, 1000000);
    for (const auto& [dir, images] : {std::pair{"train" + suffix, &train}, std::pair{"test" + suffix, &test}}) {
      fs::create_directories(root / dir);
      for (std::size_t i = 0; i < images->size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        img::save(root / dir / name, (*images)[i]);
      }
    }
  }
}

}  // namespace cut::synth
