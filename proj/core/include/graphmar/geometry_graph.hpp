#pragma once

#include <cstdint>
#include <vector>

#include "graphmar/tensor.hpp"

namespace graphmar::geometry {

inline constexpr float kMetalThresholdHu = 2800.0f;

/// Bit set iff pixel HU >= threshold.
BinaryMask extract_metal_mask(const HuImage& image, float threshold_hu = kMetalThresholdHu);

/// Implants as 8-connected components, ordered by their smallest row-major
/// pixel index. Pixels inside a component are row-major sorted.
struct ImplantSet {
  int height = 0;
  int width = 0;
  std::vector<std::vector<Pixel>> components;

  int count() const noexcept { return static_cast<int>(components.size()); }
};

ImplantSet connected_components(const BinaryMask& mask);

/// Per-implant boundary pixels: those with a non-metal 4-neighbour or lying on
/// the image border.
struct BoundarySet {
  int height = 0;
  int width = 0;
  std::vector<std::vector<Pixel>> boundaries;

  int count() const noexcept { return static_cast<int>(boundaries.size()); }
  std::size_t total_pixels() const noexcept;
};

BoundarySet boundary_pixels(const ImplantSet& implants);

struct PixelPair {
  Pixel a;
  Pixel b;
};

/// Nodes are boundary pixels; edges connect every pair of pixels taken from
/// two different implants.
struct GeometricGraph {
  int height = 0;
  int width = 0;
  std::vector<Pixel> nodes;
  std::vector<PixelPair> edges;
};

/// Uses every stride-th boundary pixel of each implant (stride 1 is exhaustive).
GeometricGraph build_geometric_graph(const BoundarySet& boundaries, int stride = 1);

/// Integer Bresenham line including both endpoints. The traversed pixel set is
/// independent of endpoint order.
std::vector<Pixel> bresenham_line(Pixel a, Pixel b);

/// Per-pixel traversal counts, one increment per edge per traversed pixel.
std::vector<std::uint32_t> accumulate_traversals(const GeometricGraph& graph, int height, int width);

/// Traversal counts min-max normalized to [0,1]. No edges gives all zeros; a
/// constant nonzero accumulator gives all ones.
Tensor rasterize_density(const GeometricGraph& graph, int height, int width);

/// Convenience pipeline: mask -> components -> boundaries -> graph -> density.
struct DensityResult {
  ImplantSet implants;
  BoundarySet boundaries;
  std::size_t edge_count = 0;
  Tensor density;
};

DensityResult density_from_mask(const BinaryMask& mask, int stride = 1);

}  // namespace graphmar::geometry
