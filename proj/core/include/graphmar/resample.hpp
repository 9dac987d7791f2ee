#pragma once

#include <vector>

#include "graphmar/tensor.hpp"

namespace graphmar {

/// Output pixel (i, j) copies source pixel (floor(i*H/h), floor(j*W/w)).
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

/// Marks a target cell when any source pixel falling inside its footprint is set.
BinaryMask resize_any(const BinaryMask& mask, int height, int width);

/// Bilinear resampling with align_corners=false and edge clamping. Accepts a
/// rank-2 map.
Tensor resize_bilinear(const Tensor& map, int height, int width);

/// One output sample along an axis: value = (1 - weight) * src[lo] + weight * src[hi].
struct LinearTap {
  int lo = 0;
  int hi = 0;
  float weight = 0.0f;
};

std::vector<LinearTap> linear_taps(int source_size, int target_size);

}  // namespace graphmar
