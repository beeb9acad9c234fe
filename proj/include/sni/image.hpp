#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sni {

/// Float RGB image, row-major [height, width, 3], values nominally in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  float at(int row, int col, int channel) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  bool operator==(const Image&) const = default;
};

/// 8-bit RGB, row-major [height, width, 3].
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Maps [-1, 1] to [0, 255] with rounding; out-of-range values are clamped.
Rgb8 to_rgb8(const Image& image);
Image from_rgb8(const Rgb8& image);

/// Decodes PNG or JPEG (sniffed from the header). Throws DataError.
Rgb8 decode_image_file(const std::filesystem::path& path);
Rgb8 decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Rgb8& image);
void write_png(const std::filesystem::path& path, const Rgb8& image);

/// Center crop to a square, then bilinear resize to size x size, mapped to [-1, 1].
Image center_crop_resize(const Rgb8& image, int size);

}  // namespace sni
