#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "graphmar/autodiff.hpp"
#include "graphmar/graphmoe.hpp"
#include "graphmar/layers.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar {

struct BackboneConfig {
  int base_channels = 16;
  /// Feature scales (downsampling factors) that receive a GraphMoE block.
  std::vector<int> graphmoe_scales{2, 4, 8};
  bool enable_graphmoe = true;
  GraphMoeConfig moe;
  /// The fused attention map and its supervision live at H / attention_scale.
  int attention_scale = 4;
};

void validate(const BackboneConfig& config, int image_size);

/// Input images are divided by this before entering the network.
inline constexpr float kHuScale = 1000.0f;

/// Everything the network needs besides the image: the metal mask, its
/// density graph and the artifact graphs at each GraphMoE scale.
struct SampleContext {
  int height = 0;
  int width = 0;
  BinaryMask metal;
  int n_implants = 0;
  Tensor density;            // image scale
  Tensor attention_density;  // density at the attention scale
  std::map<int, ScaleContext> scales;
};

SampleContext make_sample_context(const Tensor& metal_mask, const BackboneConfig& config);

struct ForwardResult {
  ad::Var prediction;  // N x 1 x H x W, HU / kHuScale
  ad::Var attention;   // N x 1 x H/a x W/a; invalid when GraphMoE is disabled
  std::vector<ad::Var> routings;
};

/// Strided encoder (three stages, H/2, H/4, H/8), a GraphMoE block after each
/// configured downsampling, nearest-upsampling decoder with skip connections
/// and a zero-initialized 1x1 head predicting the residual added to the input.
class Network {
 public:
  Network() = default;
  Network(const BackboneConfig& config, std::uint64_t seed);

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  /// input is N x 1 x H x W in HU / kHuScale.
  ForwardResult forward(ad::Tape& tape, ad::Var input, std::span<const SampleContext* const> contexts, bool train);

  std::vector<ad::Parameter*> parameters();
  std::vector<nn::BatchNorm2d*> norms();
  GraphMoE* moe_at(int scale);

  const BackboneConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  bool has_attention() const { return config_.enable_graphmoe && !config_.graphmoe_scales.empty(); }

 private:
  BackboneConfig config_;
  std::uint64_t seed_ = 0;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::Conv2d> enc_;
  std::vector<nn::Conv2d> dec_;
  nn::Conv2d out_;
  std::map<int, GraphMoE> moe_;
  nn::Conv2d attention_fuse_;
};

/// Batched eval-mode inference on HU images.
struct Prediction {
  Tensor output_hu;       // H x W
  Tensor attention;       // H/a x W/a, empty without GraphMoE
  Tensor attention_full;  // bilinear upsampling of attention to H x W
};

std::vector<Prediction> predict(Network& net, std::span<const Tensor> inputs_hu,
                                std::span<const SampleContext* const> contexts, int batch = 8);

/// Packs 2-D HU images into an N x 1 x H x W tensor scaled by 1 / kHuScale.
Tensor pack_batch(std::span<const Tensor* const> images_hu);

}  // namespace graphmar
