#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace carunet {

/// Decoded raster, interleaved channels, row-major. Samples are stored as
/// 16-bit regardless of source depth; `max_value` is 255 or 65535.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB); alpha is dropped
  std::uint32_t max_value = 255;
  std::vector<std::uint16_t> pixels;

  std::uint16_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// Reads PNG (8/16-bit, gray/RGB/palette, alpha dropped) or binary PPM/PGM
/// (P6/P5). Throws a data error naming the file on anything else.
Image read_image(const std::filesystem::path& path);

void write_png_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     std::span<const std::uint8_t> pixels);
void write_png_gray16(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const std::uint16_t> pixels);
void write_png_rgb8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels);

}  // namespace carunet
