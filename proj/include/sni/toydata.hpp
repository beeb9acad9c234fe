#pragma once

// Synthetic image sets: soft discs and boxes on a two-colour gradient.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sni/image.hpp"

namespace sni {

Rgb8 toy_image(int size, std::uint64_t seed);

/// Writes toy_000000.png ... into `dir`; image i uses derive_seed(seed, {i}).
std::vector<std::filesystem::path> write_toy_images(const std::filesystem::path& dir, int count, int size,
                                                    std::uint64_t seed);

}  // namespace sni
