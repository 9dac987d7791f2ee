#include "graphmar/network.hpp"

#include <algorithm>
#include <stdexcept>

#include "graphmar/geometry_graph.hpp"
#include "graphmar/resample.hpp"

namespace graphmar {

namespace {

constexpr int kStages = 3;

int stage_channels(int base, int stage) {
  static constexpr int kMultipliers[] = {1, 2, 3, 4};
  return base * kMultipliers[stage];
}

}  // namespace

void validate(const BackboneConfig& config, int image_size) {
  if (config.base_channels < 2 || config.base_channels % 2 != 0)
    throw std::invalid_argument("base channels must be even and >= 2");
  for (int s : config.graphmoe_scales)
    if (s != 2 && s != 4 && s != 8) throw std::invalid_argument("GraphMoE scales must be drawn from {2, 4, 8}");
  if (image_size > 0 && image_size % 8 != 0) throw std::invalid_argument("image size must be divisible by 8");
  if (config.attention_scale != 2 && config.attention_scale != 4 && config.attention_scale != 8)
    throw std::invalid_argument("attention scale must be 2, 4 or 8");
}

SampleContext make_sample_context(const Tensor& metal_mask, const BackboneConfig& config) {
  SampleContext ctx;
  ctx.metal = BinaryMask::from_tensor(metal_mask);
  ctx.height = ctx.metal.height();
  ctx.width = ctx.metal.width();
  validate(config, ctx.height);
  if (ctx.height % 8 != 0 || ctx.width % 8 != 0) throw std::invalid_argument("image dimensions must be divisible by 8");
  const auto density = geometry::density_from_mask(ctx.metal);
  ctx.n_implants = density.implants.count();
  ctx.density = density.density;
  ctx.attention_density =
      resize_bilinear(ctx.density, ctx.height / config.attention_scale, ctx.width / config.attention_scale);
  if (config.enable_graphmoe) {
    for (int s : config.graphmoe_scales)
      ctx.scales.emplace(s, prepare_scale_context(ctx.metal, ctx.density, ctx.n_implants, ctx.height / s,
                                                  ctx.width / s, config.moe.graph));
  }
  return ctx;
}

Network::Network(const BackboneConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  validate(config, 0);
  const int b = config.base_channels;
  stem_ = nn::Conv2d("stem", 1, b, 3, 1, seed);
  for (int s = 1; s <= kStages; ++s) {
    const int cin = stage_channels(b, s - 1);
    const int cout = stage_channels(b, s);
    const std::string stage = "enc" + std::to_string(s);
    down_.emplace_back(stage + ".down", cin, cout, 3, 2, seed);
    enc_.emplace_back(stage + ".conv", cout, cout, 3, 1, seed);
  }
  // Decoder stage s maps up(stage s+1) ++ skip(stage s) to stage s channels.
  for (int s = kStages - 1; s >= 0; --s) {
    const int cin = stage_channels(b, s + 1) + stage_channels(b, s);
    dec_.emplace_back("dec" + std::to_string(s) + ".conv", cin, stage_channels(b, s), 3, 1, seed);
  }
  out_ = nn::Conv2d("head", b, 1, 1, 1, seed, /*zero_init=*/true);

  if (config.enable_graphmoe) {
    for (int s : config.graphmoe_scales) {
      const int stage = s == 2 ? 1 : s == 4 ? 2 : 3;
      moe_.emplace(s, GraphMoE("moe" + std::to_string(s), stage_channels(b, stage), config.moe, seed));
    }
    if (!moe_.empty())
      attention_fuse_ = nn::Conv2d("attention.fuse", static_cast<int>(moe_.size()), 1, 1, 1, seed);
  }
}

GraphMoE* Network::moe_at(int scale) {
  auto it = moe_.find(scale);
  return it == moe_.end() ? nullptr : &it->second;
}

ForwardResult Network::forward(ad::Tape& tape, ad::Var input, std::span<const SampleContext* const> contexts,
                               bool train) {
  const Tensor& x = tape.value(input);
  if (x.rank() != 4 || x.dim(1) != 1) throw std::invalid_argument("network input must be N x 1 x H x W");
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) throw std::invalid_argument("input size must be divisible by 8");
  if (contexts.size() != static_cast<std::size_t>(x.dim(0)))
    throw std::invalid_argument("one sample context per input image required");
  // x refers into the tape, which reallocates as operations are recorded.
  const int height = x.dim(2);
  const int width = x.dim(3);

  ForwardResult result;
  std::vector<ad::Var> skips;
  std::vector<ad::Var> scale_maps;
  ad::Var h = ad::relu(tape, stem_.forward(tape, input));
  skips.push_back(h);
  for (int s = 1; s <= kStages; ++s) {
    h = ad::relu(tape, down_[s - 1].forward(tape, h));
    const int factor = 1 << s;
    if (auto it = moe_.find(factor); it != moe_.end()) {
      std::vector<const ScaleContext*> sc;
      sc.reserve(contexts.size());
      for (const SampleContext* c : contexts) {
        auto found = c->scales.find(factor);
        if (found == c->scales.end())
          throw std::invalid_argument("sample context lacks the graph for scale " + std::to_string(factor));
        sc.push_back(&found->second);
      }
      const GraphMoeOutput moe = it->second.forward(tape, h, sc, train);
      h = moe.output;
      result.routings.push_back(moe.routing);
      scale_maps.push_back(moe.scale_map);
    }
    h = ad::relu(tape, enc_[s - 1].forward(tape, h));
    if (s < kStages) skips.push_back(h);
  }
  for (int i = 0; i < kStages; ++i) {
    const ad::Var up = ad::upsample_nearest(tape, h, 2);
    const ad::Var cat[] = {up, skips[kStages - 1 - i]};
    h = ad::relu(tape, dec_[i].forward(tape, ad::concat_channels(tape, cat)));
  }
  result.prediction = ad::add(tape, input, out_.forward(tape, h));
  if (!scale_maps.empty())
    result.attention = aggregate_attention(tape, scale_maps, attention_fuse_, height / config_.attention_scale,
                                           width / config_.attention_scale);
  return result;
}

std::vector<ad::Parameter*> Network::parameters() {
  std::vector<ad::Parameter*> out;
  stem_.collect(out);
  for (int s = 0; s < kStages; ++s) {
    down_[s].collect(out);
    if (auto it = moe_.find(2 << s); it != moe_.end()) it->second.collect(out);
    enc_[s].collect(out);
  }
  for (auto& d : dec_) d.collect(out);
  out_.collect(out);
  if (!moe_.empty()) attention_fuse_.collect(out);
  return out;
}

std::vector<nn::BatchNorm2d*> Network::norms() {
  std::vector<nn::BatchNorm2d*> out;
  for (auto& [scale, m] : moe_)
    for (nn::BatchNorm2d* b : m.norms()) out.push_back(b);
  return out;
}

Tensor pack_batch(std::span<const Tensor* const> images_hu) {
  if (images_hu.empty()) throw std::invalid_argument("empty batch");
  const Tensor& first = *images_hu[0];
  if (first.rank() != 2) throw std::invalid_argument("expected 2-D HU images");
  const int h = first.dim(0);
  const int w = first.dim(1);
  const int n = static_cast<int>(images_hu.size());
  Tensor out({n, 1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const Tensor& img = *images_hu[i];
    if (img.shape() != first.shape()) throw std::invalid_argument("batch images differ in shape");
    for (std::size_t k = 0; k < plane; ++k) out[i * plane + k] = img[k] / kHuScale;
  }
  return out;
}

std::vector<Prediction> predict(Network& net, std::span<const Tensor> inputs_hu,
                                std::span<const SampleContext* const> contexts, int batch) {
  if (inputs_hu.size() != contexts.size()) throw std::invalid_argument("predict: one context per input required");
  if (batch < 1) throw std::invalid_argument("predict: batch must be positive");
  std::vector<Prediction> out;
  out.reserve(inputs_hu.size());
  for (std::size_t start = 0; start < inputs_hu.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(inputs_hu.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Tensor*> imgs;
    for (std::size_t i = start; i < stop; ++i) imgs.push_back(&inputs_hu[i]);
    ad::Tape tape;
    const ad::Var in = tape.constant(pack_batch(imgs));
    const ForwardResult fr = net.forward(tape, in, contexts.subspan(start, stop - start), /*train=*/false);
    const Tensor& pred = tape.value(fr.prediction);
    const int h = pred.dim(2);
    const int w = pred.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < stop - start; ++i) {
      Prediction p;
      p.output_hu = Tensor({h, w});
      for (std::size_t k = 0; k < plane; ++k) p.output_hu[k] = pred[i * plane + k] * kHuScale;
      if (fr.attention.valid()) {
        const Tensor& att = tape.value(fr.attention);
        const int ah = att.dim(2);
        const int aw = att.dim(3);
        const std::size_t ap = static_cast<std::size_t>(ah) * aw;
        p.attention = Tensor({ah, aw}, std::vector<float>(att.data().begin() + i * ap,
                                                          att.data().begin() + (i + 1) * ap));
        p.attention_full = resize_bilinear(p.attention, h, w);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace graphmar
