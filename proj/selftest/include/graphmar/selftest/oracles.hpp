#pragma once

// Brute-force reference implementations. They trade speed for directness and
// share no code with the library routines they check.

#include <cstdint>
#include <vector>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar::oracle {

/// Components by union-find over every pair of set pixels at Chebyshev
/// distance 1, ordered by smallest row-major index, pixels sorted.
std::vector<std::vector<Pixel>> components(const BinaryMask& mask);

/// Component pixels with a 4-neighbour that is off-image or unset.
std::vector<std::vector<Pixel>> boundaries(const BinaryMask& mask, const std::vector<std::vector<Pixel>>& comps);

/// Line rasterization as exact rounding: along the major axis from the
/// row-major smaller endpoint, the minor offset after k steps is
/// k*minor/major rounded to nearest, halves toward the start.
std::vector<Pixel> line(Pixel a, Pixel b);

/// Density map from scratch: counts every cross-implant boundary pair's line,
/// then min-max normalizes.
Tensor density(const BinaryMask& mask);

struct PolarNode {
  Pixel nearest;
  double radius = 0.0;
  double angle = 0.0;
};

/// Nearest metal pixel by exhaustive search.
std::vector<PolarNode> polar(const BinaryMask& metal);

/// exp(-d^2 / (2 sigma^2)) evaluated from the definitions in double.
double angular_weight(double ti, double tj, double sigma);
double radial_weight(double ri, double rj, double sigma);

/// Top-k selection by fully sorting every candidate list.
std::vector<artifact::Edge> topk_edges(const std::vector<float>& radius, const std::vector<float>& angle, int k_ang,
                                       int k_rad, double sigma);

/// Dense D^-1/2 (A + A^T) D^-1/2 with zero diagonal.
std::vector<double> normalized_dense(int n, const std::vector<artifact::Edge>& directed);

/// Mean SSIM with the non-separable 11x11 Gaussian window evaluated directly.
double ssim(const Tensor& a, const Tensor& b, double data_range);

/// Random mask with 1..max_blobs filled discs/rectangles.
BinaryMask random_mask(std::uint64_t seed, int height, int width, int max_blobs);

}  // namespace graphmar::oracle
