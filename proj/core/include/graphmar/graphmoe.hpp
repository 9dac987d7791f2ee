#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/autodiff.hpp"
#include "graphmar/layers.hpp"

namespace graphmar {

struct GraphMoeConfig {
  int experts = 3;
  int max_graph_channels = 128;
  artifact::ArtifactGraphOptions graph;
  /// When false the router is a plain 1x1 convolution of the reduced feature
  /// (no polar embedding, no message passing).
  bool enable_graph_router = true;
};

/// min(channels, max_graph_channels); must be even and >= 2.
int graph_channels_for(int channels, const GraphMoeConfig& config);

/// Per-sample geometry at one feature scale.
struct ScaleContext {
  int height = 0;
  int width = 0;
  Tensor radius;    // H_f x W_f, feature-grid pixels
  Tensor angle;     // H_f x W_f, radians
  Tensor density;   // G resampled to H_f x W_f
  artifact::SparseAdjacency adjacency;
  int n_implants = 0;
  bool has_metal = false;
  bool density_reweighted = false;
  int max_out_degree = 0;
};

/// Resamples the image-scale mask (nearest) and density (bilinear) to the
/// feature grid, computes the polar field and builds the artifact graph. If
/// nearest resampling loses every metal pixel of a non-empty mask, a cell is
/// marked wherever any source metal pixel falls inside it. A metal-free mask
/// yields r = theta = 0 and an empty graph.
ScaleContext prepare_scale_context(const BinaryMask& metal, const Tensor& density, int n_implants, int height,
                                   int width, const artifact::ArtifactGraphOptions& options);

struct GraphMoeOutput {
  ad::Var output;     // Z + projection(fused experts), C x H x W
  ad::Var routing;    // K x H x W, softmax over K
  ad::Var scale_map;  // 1 x H x W attention head
};

/// Graph-routed mixture of experts acting on a backbone feature map.
///
///   Z_g = reduce(Z)
///   H   = Z_g + MLP(r) + Sin(theta)
///   H'  = ReLU(GCN(A, H)) + H
///   w   = softmax(router(H'))            router zero-initialized
///   U_k = ReLU(BN(conv3x3_k(Z_g)))
///   out = Z + project(sum_k w_k U_k)     project zero-initialized
///   scale_map = head(H')
class GraphMoE {
 public:
  GraphMoE() = default;
  GraphMoE(const std::string& name, int channels, const GraphMoeConfig& config, std::uint64_t seed);

  GraphMoeOutput forward(ad::Tape& tape, ad::Var z, std::span<const ScaleContext* const> contexts, bool train);

  void collect(std::vector<ad::Parameter*>& out);
  std::vector<nn::BatchNorm2d*> norms();

  int channels() const { return channels_; }
  int graph_channels() const { return graph_channels_; }
  int experts() const { return config_.experts; }
  const std::string& name() const { return name_; }

  /// Test hook: replace the routing map by a one-hot selection of one expert.
  std::optional<int> forced_expert;

  nn::Conv2d reduce;
  nn::Conv2d radial_hidden;
  nn::Conv2d radial_out;
  nn::Conv2d gcn;
  nn::Conv2d router;
  nn::Conv2d head;
  nn::Conv2d project;
  std::vector<nn::Conv2d> expert_convs;
  std::vector<nn::BatchNorm2d> expert_norms;

 private:
  std::string name_;
  int channels_ = 0;
  int graph_channels_ = 0;
  GraphMoeConfig config_;
};

/// Resize each N x 1 x h_s x w_s scale map to (height, width), concatenate along
/// channels and fuse with a 1x1 convolution to a single channel.
ad::Var aggregate_attention(ad::Tape& tape, std::span<const ad::Var> scale_maps, nn::Conv2d& fuse, int height,
                            int width);

}  // namespace graphmar
