#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphmar/tensor.hpp"

namespace graphmar {

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary tensor layout:
//   8-byte magic "GMARTNS1"
//   u8 rank
//   rank x little-endian u32 dims
//   row-major little-endian float32 payload
inline constexpr std::array<char, 8> kTensorMagic = {'G', 'M', 'A', 'R', 'T', 'N', 'S', '1'};

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

struct GrayImage8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Linear window: lo maps to 0, hi maps to 255, clamped, rounded to nearest.
GrayImage8 window_to_u8(const Tensor& map, float lo, float hi);

/// Min-max normalized to [0,255]; constant input yields all zeros.
GrayImage8 minmax_to_u8(const Tensor& map);

void save_png_gray(const Tensor& map, const std::filesystem::path& path, float lo, float hi);
void save_png(const GrayImage8& image, const std::filesystem::path& path);
GrayImage8 load_png(const std::filesystem::path& path);

}  // namespace graphmar
