#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "graphmar/tensor_io.hpp"

namespace graphmar {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Tensor as_2d(const Tensor& map) {
  if (map.rank() == 2) return map;
  if (map.rank() == 3 && map.dim(0) == 1) return map.reshaped({map.dim(1), map.dim(2)});
  if (map.rank() == 4 && map.dim(0) == 1 && map.dim(1) == 1) return map.reshaped({map.dim(2), map.dim(3)});
  throw std::invalid_argument("PNG export expects a single-channel 2-D map");
}

}  // namespace

GrayImage8 window_to_u8(const Tensor& map, float lo, float hi) {
  if (!(lo < hi)) throw std::invalid_argument("window requires lo < hi");
  const Tensor m = as_2d(map);
  GrayImage8 img{m.dim(0), m.dim(1), std::vector<std::uint8_t>(m.size())};
  const double scale = 255.0 / (static_cast<double>(hi) - lo);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = std::clamp((static_cast<double>(m[i]) - lo) * scale, 0.0, 255.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return img;
}

GrayImage8 minmax_to_u8(const Tensor& map) {
  const Tensor m = as_2d(map);
  const float lo = m.min();
  const float hi = m.max();
  if (!(lo < hi)) return GrayImage8{m.dim(0), m.dim(1), std::vector<std::uint8_t>(m.size(), 0)};
  return window_to_u8(m, lo, hi);
}

void save_png_gray(const Tensor& map, const std::filesystem::path& path, float lo, float hi) {
  save_png(window_to_u8(map, lo, hi), path);
}

void save_png(const GrayImage8& image, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < image.height; ++r)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(r) * image.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage8 load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for reading: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  GrayImage8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r)
    png_read_row(png, img.pixels.data() + static_cast<std::size_t>(r) * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace graphmar
