#include "sni/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "sni/rng.hpp"

namespace sni {

namespace {

struct Color {
  float r, g, b;
};

Color random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

Rgb8 toy_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const Color top = random_color(rng), bottom = random_color(rng);
  std::vector<float> px(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    const float t = (y + 0.5f) / size;
    for (int x = 0; x < size; ++x) {
      float* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
      p[0] = top.r * (1 - t) + bottom.r * t;
      p[1] = top.g * (1 - t) + bottom.g * t;
      p[2] = top.b * (1 - t) + bottom.b * t;
    }
  }
  const int shapes = 1 + static_cast<int>(rng() % 3);
  for (int s = 0; s < shapes; ++s) {
    const Color c = random_color(rng);
    const bool disc = u(rng) < 0.6f;
    const float cx = (0.2f + 0.6f * u(rng)) * size, cy = (0.2f + 0.6f * u(rng)) * size;
    const float rad = (0.12f + 0.18f * u(rng)) * size;
    const float edge = 0.06f * size + 0.5f;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        const float d = disc ? std::sqrt(dx * dx + dy * dy) - rad : std::max(std::abs(dx), std::abs(dy)) - rad;
        const float a = std::clamp(0.5f - d / edge, 0.0f, 1.0f);
        float* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
        p[0] += a * (c.r - p[0]);
        p[1] += a * (c.g - p[1]);
        p[2] += a * (c.b - p[2]);
      }
  }
  Rgb8 img;
  img.width = img.height = size;
  img.pixels.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

std::vector<std::filesystem::path> write_toy_images(const std::filesystem::path& dir, int count, int size,
                                                    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "toy_%06d.png", i);
    paths.push_back(dir / name);
    write_png(paths.back(), toy_image(size, derive_seed(seed, {static_cast<std::uint64_t>(i)})));
  }
  return paths;
}

}  // namespace sni
