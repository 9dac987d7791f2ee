#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "graphmar/tensor.hpp"

namespace graphmar::artifact {

class EmptyMetalError : public std::runtime_error {
 public:
  EmptyMetalError() : std::runtime_error("metal mask has no set pixels") {}
};

/// Polar coordinates of every feature-grid node relative to its nearest metal
/// pixel. Offsets use x = column, y = row; angle = atan2(dy, dx) in (-pi, pi],
/// and 0 for nodes lying on metal.
struct PolarField {
  int height = 0;
  int width = 0;
  std::vector<Pixel> nearest;
  std::vector<float> radius;
  std::vector<float> angle;

  int node_count() const noexcept { return height * width; }
  Tensor radius_map() const;
  Tensor angle_map() const;
};

/// Exact Euclidean nearest set pixel, ties to the smallest row-major index.
/// Throws EmptyMetalError when the mask is empty.
PolarField compute_polar(const BinaryMask& metal);

/// Polar field with r = 0 and theta = 0 everywhere (metal-free input).
PolarField zero_polar(int height, int width);

/// min(|a-b|, 2*pi - |a-b|).
double circular_distance(double a, double b);

/// exp(-d_theta^2 / (2 sigma^2)) with circular angle distance.
float angular_weight(float theta_i, float theta_j, float sigma = 2.0f);

/// exp(-(r_i - r_j)^2 / (2 sigma^2)).
float radial_weight(float r_i, float r_j, float sigma = 2.0f);

struct Edge {
  int from = 0;
  int to = 0;
  float weight = 0.0f;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Symmetric, degree-normalized sparse graph in CSR form.
///
/// A default-constructed adjacency is unfinalized; propagation through it is a
/// state error. `from_directed` symmetrizes (A + A^T), drops zero weights and
/// applies D^{-1/2} A D^{-1/2}, treating a zero degree as 1.
class SparseAdjacency {
 public:
  SparseAdjacency() = default;

  static SparseAdjacency from_directed(int node_count, std::span<const Edge> directed);
  static SparseAdjacency empty(int node_count);

  bool finalized() const noexcept { return finalized_; }
  int node_count() const noexcept { return node_count_; }
  std::size_t nonzeros() const noexcept { return columns_.size(); }

  std::span<const int> row_offsets() const noexcept { return row_offsets_; }
  std::span<const int> columns() const noexcept { return columns_; }
  /// Normalized weights.
  std::span<const float> weights() const noexcept { return weights_; }
  /// Symmetrized weights before normalization.
  std::span<const float> raw_weights() const noexcept { return raw_weights_; }
  std::span<const double> degrees() const noexcept { return degrees_; }

  float weight(int i, int j) const;
  Tensor to_dense() const;

  /// out[c, i] = sum_j A[i, j] * h[c, j] for channel-major (channels x n) data.
  void propagate(std::span<const float> h, int channels, std::span<float> out) const;
  /// out[c, j] += sum_i A[i, j] * g[c, i].
  void propagate_transpose_add(std::span<const float> g, int channels, std::span<float> out) const;

 private:
  void require_finalized() const;

  bool finalized_ = false;
  int node_count_ = 0;
  std::vector<int> row_offsets_;
  std::vector<int> columns_;
  std::vector<float> weights_;
  std::vector<float> raw_weights_;
  std::vector<double> degrees_;
};

struct ArtifactGraphOptions {
  int k_angular = 12;
  int k_radial = 4;
  float sigma = 2.0f;
  bool enable_angular = true;
  bool enable_radial = true;
  bool enable_density_reweight = true;
};

struct ArtifactGraph {
  SparseAdjacency adjacency;
  /// Selected edges before symmetrization (density reweighting applied).
  std::vector<Edge> directed;
  int max_out_degree = 0;
  bool density_reweighted = false;
};

/// Per node, the top-k angular and top-k radial peers (self excluded, ties to
/// the smallest index). Weights of a pair picked by both kinds add up. Result
/// is sorted by (from, to).
std::vector<Edge> select_polar_edges(const PolarField& polar, const ArtifactGraphOptions& options);

/// Full construction: edge selection, density reweighting by
/// sqrt(G(i) G(j)) when n_implants >= 2, then symmetric normalization.
ArtifactGraph build_artifact_graph(const PolarField& polar, const Tensor& density, int n_implants,
                                   const ArtifactGraphOptions& options = {});

}  // namespace graphmar::artifact
