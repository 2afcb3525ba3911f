#pragma once

#include <cstdint>
#include <filesystem>

#include "mgcc/data.hpp"

namespace mgcc::image_io {

// Any bit depth / channel count; multi-channel files are reduced to luminance.
data::Image read_luminance(const std::filesystem::path& path);
// Nonzero pixels become 1.
data::Mask read_mask(const std::filesystem::path& path);

void write_image(const data::Image& image, const std::filesystem::path& path);
void write_mask(const data::Mask& mask, const std::filesystem::path& path);

data::Image resize_bilinear(const data::Image& image, std::int64_t height, std::int64_t width);
data::Mask resize_nearest(const data::Mask& mask, std::int64_t height, std::int64_t width);

data::Image gaussian_blur(const data::Image& image, double sigma);

// 8-bit BGR canvas stored row-major, 3 bytes per pixel.
struct ColorImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> bgr;
};
void write_color(const ColorImage& image, const std::filesystem::path& path);

}  // namespace mgcc::image_io
