#include "graphmar/graphmoe.hpp"

#include <algorithm>
#include <stdexcept>

#include "graphmar/resample.hpp"

namespace graphmar {

int graph_channels_for(int channels, const GraphMoeConfig& config) {
  const int cg = std::min(channels, config.max_graph_channels);
  if (cg < 2 || cg % 2 != 0)
    throw std::invalid_argument("graph channel count must be even and >= 2, got " + std::to_string(cg));
  return cg;
}

ScaleContext prepare_scale_context(const BinaryMask& metal, const Tensor& density, int n_implants, int height,
                                   int width, const artifact::ArtifactGraphOptions& options) {
  ScaleContext ctx;
  ctx.height = height;
  ctx.width = width;
  ctx.n_implants = n_implants;
  ctx.density = resize_bilinear(density, height, width);
  BinaryMask metal_f = resize_nearest(metal, height, width);
  if (!metal_f.any() && metal.any()) metal_f = resize_any(metal, height, width);
  ctx.has_metal = metal_f.any();
  if (!ctx.has_metal) {
    const auto polar = artifact::zero_polar(height, width);
    ctx.radius = polar.radius_map();
    ctx.angle = polar.angle_map();
    ctx.adjacency = artifact::SparseAdjacency::empty(height * width);
    return ctx;
  }
  const auto polar = artifact::compute_polar(metal_f);
  ctx.radius = polar.radius_map();
  ctx.angle = polar.angle_map();
  auto graph = artifact::build_artifact_graph(polar, ctx.density, n_implants, options);
  ctx.adjacency = std::move(graph.adjacency);
  ctx.density_reweighted = graph.density_reweighted;
  ctx.max_out_degree = graph.max_out_degree;
  return ctx;
}

GraphMoE::GraphMoE(const std::string& name, int channels, const GraphMoeConfig& config, std::uint64_t seed)
    : name_(name), channels_(channels), config_(config) {
  if (config.experts < 1) throw std::invalid_argument("GraphMoE needs at least one expert");
  graph_channels_ = graph_channels_for(channels, config);
  const int cg = graph_channels_;
  reduce = nn::Conv2d(name + ".reduce", channels, cg, 1, 1, seed);
  radial_hidden = nn::Conv2d(name + ".radial_mlp.0", 1, cg, 1, 1, seed);
  radial_out = nn::Conv2d(name + ".radial_mlp.1", cg, cg, 1, 1, seed);
  gcn = nn::Conv2d(name + ".gcn", cg, cg, 1, 1, seed);
  router = nn::Conv2d(name + ".router", cg, config.experts, 1, 1, seed, /*zero_init=*/true);
  head = nn::Conv2d(name + ".attention_head", cg, 1, 1, 1, seed);
  project = nn::Conv2d(name + ".project", cg, channels, 1, 1, seed, /*zero_init=*/true);
  for (int k = 0; k < config.experts; ++k) {
    const std::string en = name + ".expert" + std::to_string(k);
    expert_convs.emplace_back(en + ".conv", cg, cg, 3, 1, seed);
    expert_norms.emplace_back(en + ".bn", cg);
  }
}

namespace {

// Stacks per-sample H_f x W_f maps into an N x 1 x H_f x W_f tensor.
Tensor stack_maps(std::span<const ScaleContext* const> contexts, Tensor ScaleContext::*field) {
  const int n = static_cast<int>(contexts.size());
  const int h = contexts[0]->height;
  const int w = contexts[0]->width;
  Tensor out({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    const Tensor& m = contexts[i]->*field;
    std::copy(m.data().begin(), m.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i) * h * w);
  }
  return out;
}

}  // namespace

GraphMoeOutput GraphMoE::forward(ad::Tape& tape, ad::Var z, std::span<const ScaleContext* const> contexts,
                                 bool train) {
  const Tensor& zv = tape.value(z);
  if (zv.rank() != 4 || zv.dim(1) != channels_)
    throw std::invalid_argument(name_ + ": expected N x " + std::to_string(channels_) + " x H x W input");
  if (contexts.size() != static_cast<std::size_t>(zv.dim(0)))
    throw std::invalid_argument(name_ + ": one scale context per sample required");
  for (const ScaleContext* c : contexts)
    if (c->height != zv.dim(2) || c->width != zv.dim(3))
      throw std::invalid_argument(name_ + ": scale context does not match the feature grid");

  const ad::Var zg = reduce.forward(tape, z);

  ad::Var embedded = zg;
  ad::Var graph_embed = zg;
  if (config_.enable_graph_router) {
    const ad::Var radius = tape.constant(stack_maps(contexts, &ScaleContext::radius));
    const ad::Var angle = tape.constant(stack_maps(contexts, &ScaleContext::angle));
    const ad::Var radial = radial_out.forward(tape, ad::relu(tape, radial_hidden.forward(tape, radius)));
    const ad::Var angular = ad::sinusoidal_embed(tape, angle, graph_channels_);
    embedded = ad::add(tape, ad::add(tape, zg, radial), angular);

    std::vector<const artifact::SparseAdjacency*> adj;
    adj.reserve(contexts.size());
    for (const ScaleContext* c : contexts) adj.push_back(&c->adjacency);
    const ad::Var message =
        ad::gcn_layer(tape, adj, embedded, tape.parameter(gcn.weight), tape.parameter(gcn.bias));
    graph_embed = ad::add(tape, ad::relu(tape, message), embedded);
  }

  ad::Var routing;
  if (forced_expert) {
    const Tensor& ref = tape.value(zg);
    Tensor onehot({ref.dim(0), config_.experts, ref.dim(2), ref.dim(3)});
    const std::size_t plane = static_cast<std::size_t>(ref.dim(2)) * ref.dim(3);
    for (int n = 0; n < ref.dim(0); ++n)
      std::fill_n(onehot.data().begin() + static_cast<std::ptrdiff_t>((n * config_.experts + *forced_expert) * plane),
                  plane, 1.0f);
    routing = tape.constant(std::move(onehot));
  } else {
    routing = ad::softmax_channels(tape, router.forward(tape, graph_embed));
  }

  std::vector<ad::Var> expert_out;
  expert_out.reserve(expert_convs.size());
  for (std::size_t k = 0; k < expert_convs.size(); ++k)
    expert_out.push_back(
        ad::relu(tape, expert_norms[k].forward(tape, expert_convs[k].forward(tape, zg), train)));

  const ad::Var fused = ad::route_and_fuse(tape, routing, expert_out);
  const ad::Var out = ad::add(tape, z, project.forward(tape, fused));
  const ad::Var scale_map = head.forward(tape, graph_embed);
  return {out, routing, scale_map};
}

void GraphMoE::collect(std::vector<ad::Parameter*>& out) {
  reduce.collect(out);
  if (config_.enable_graph_router) {
    radial_hidden.collect(out);
    radial_out.collect(out);
    gcn.collect(out);
  }
  router.collect(out);
  head.collect(out);
  project.collect(out);
  for (auto& c : expert_convs) c.collect(out);
  for (auto& b : expert_norms) b.collect(out);
}

std::vector<nn::BatchNorm2d*> GraphMoE::norms() {
  std::vector<nn::BatchNorm2d*> out;
  for (auto& b : expert_norms) out.push_back(&b);
  return out;
}

ad::Var aggregate_attention(ad::Tape& tape, std::span<const ad::Var> scale_maps, nn::Conv2d& fuse, int height,
                            int width) {
  if (scale_maps.empty()) throw std::invalid_argument("aggregate_attention needs at least one scale map");
  std::vector<ad::Var> resized;
  resized.reserve(scale_maps.size());
  for (ad::Var m : scale_maps) resized.push_back(ad::resize_bilinear(tape, m, height, width));
  const ad::Var stacked = resized.size() == 1 ? resized[0] : ad::concat_channels(tape, resized);
  return fuse.forward(tape, stacked);
}

}  // namespace graphmar
