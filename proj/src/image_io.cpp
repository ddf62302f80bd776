#include "carunet/image_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include <png.h>

#include "carunet/error.hpp"

namespace carunet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::data, "cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  *where = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

Image read_png(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::data, "libpng initialisation failed for " + path.string());
  }
  Image img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::data, "cannot decode PNG " + path.string() + ": " + error);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host-order 16-bit samples
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  img.max_value = out_depth == 16 ? 65535 : 255;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.channels != 1 && img.channels != 3) {
    fail(ErrorKind::data, "unsupported channel count " + std::to_string(img.channels) + " in " + path.string());
  }
  const std::size_t n = img.width * img.height * img.channels;
  img.pixels.resize(n);
  if (out_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) std::memcpy(&img.pixels[i], buffer.data() + 2 * i, 2);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = buffer[i];
  }
  return img;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t += c;
    }
    return t;
  };
  const std::string magic = token();
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    img.max_value = static_cast<std::uint32_t>(std::stoul(token()));
  } catch (const std::exception&) {
    fail(ErrorKind::data, "malformed PNM header in " + path.string());
  }
  if (img.max_value == 0 || img.max_value > 65535 || img.width == 0 || img.height == 0) {
    fail(ErrorKind::data, "unsupported PNM geometry in " + path.string());
  }
  const std::size_t n = img.width * img.height * img.channels;
  const std::size_t bytes_per = img.max_value > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(ErrorKind::data, "truncated PNM data in " + path.string());
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = bytes_per == 2 ? static_cast<std::uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1]) : raw[i];
  }
  return img;
}

template <typename Sample>
void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int channels,
               std::span<const Sample> pixels) {
  if (pixels.size() != width * height * static_cast<std::size_t>(channels)) {
    fail(ErrorKind::shape, "write_png: pixel buffer does not match " + std::to_string(width) + "x" +
                               std::to_string(height));
  }
  File f = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::data, "libpng initialisation failed for " + path.string());
  }
  constexpr int depth = sizeof(Sample) * 8;
  std::vector<unsigned char> buffer(pixels.size() * sizeof(Sample));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if constexpr (depth == 16) {
      buffer[2 * i] = static_cast<unsigned char>(pixels[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(pixels[i] & 0xff);
    } else {
      buffer[i] = pixels[i];
    }
  }
  std::vector<png_bytep> rows(height);
  const std::size_t stride = width * channels * sizeof(Sample);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::data, "cannot encode PNG " + path.string() + ": " + error);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) fail(ErrorKind::data, "cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  const auto got = probe.gcount();
  probe.close();
  if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  fail(ErrorKind::data, "unsupported image format (expected PNG or binary PPM/PGM): " + path.string());
}

void write_png_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     std::span<const std::uint8_t> pixels) {
  write_png<std::uint8_t>(path, width, height, 1, pixels);
}

void write_png_gray16(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const std::uint16_t> pixels) {
  write_png<std::uint16_t>(path, width, height, 1, pixels);
}

void write_png_rgb8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels) {
  write_png<std::uint8_t>(path, width, height, 3, pixels);
}

}  // namespace carunet
