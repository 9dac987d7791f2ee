#include "graphmar/selftest/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/fusion.hpp"
#include "graphmar/geometry_graph.hpp"
#include "graphmar/graphmoe.hpp"
#include "graphmar/losses.hpp"
#include "graphmar/metrics.hpp"
#include "graphmar/rng.hpp"
#include "graphmar/selftest/gradcheck.hpp"
#include "graphmar/selftest/oracles.hpp"

namespace graphmar::selftest {

namespace {

constexpr double kWeightTol = 1e-5;
constexpr double kGradTol = 1e-3;
// Ops that are affine in every single input coordinate have exact central
// differences up to float rounding.
constexpr double kLinearGradTol = 1e-4;

struct Instance {
  BinaryMask mask;
  std::uint64_t seed;
};

std::vector<Instance> instances(const Options& o, std::string_view tag, int min_size = 4) {
  SplitMix64 rng(derive_seed(o.seed, tag));
  std::vector<Instance> out;
  for (int i = 0; i < o.graph_instances; ++i) {
    const int h = rng.uniform_int(min_size, o.max_size);
    const int w = rng.uniform_int(min_size, o.max_size);
    const std::uint64_t s = rng.next();
    out.push_back({oracle::random_mask(s, h, w, 5), s});
  }
  return out;
}

// Polar fields on grids up to 16 x 16 keep the dense oracles quick.
std::vector<Instance> feature_instances(const Options& o, std::string_view tag) {
  Options small = o;
  small.max_size = std::min(o.max_size, 16);
  std::vector<Instance> out;
  for (auto& inst : instances(small, tag, 3))
    if (inst.mask.any()) out.push_back(std::move(inst));
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double angle_diff(double a, double b) {
  const double d = std::fabs(a - b);
  return std::min(d, 2.0 * std::numbers::pi - d);
}

SuiteResult make_result(const char* name) {
  SuiteResult r;
  r.name = name;
  r.passed = true;
  return r;
}

void fail(SuiteResult& r, const std::string& why) {
  if (r.detail.empty()) r.detail = why;
  r.passed = false;
}

SuiteResult suite_components(const Options& o) {
  SuiteResult r = make_result("components");
  for (const auto& inst : instances(o, "components")) {
    ++r.cases;
    if (geometry::connected_components(inst.mask).components != oracle::components(inst.mask)) {
      r.worst += 1;
      fail(r, "component mismatch for mask seed " + std::to_string(inst.seed));
    }
  }
  return r;
}

SuiteResult suite_boundary(const Options& o) {
  SuiteResult r = make_result("boundary");
  for (const auto& inst : instances(o, "boundary")) {
    ++r.cases;
    const auto comps = oracle::components(inst.mask);
    const auto got = geometry::boundary_pixels(geometry::connected_components(inst.mask)).boundaries;
    if (got != oracle::boundaries(inst.mask, comps)) {
      r.worst += 1;
      fail(r, "boundary mismatch for mask seed " + std::to_string(inst.seed));
    }
  }
  return r;
}

SuiteResult suite_bresenham(const Options& o) {
  SuiteResult r = make_result("bresenham");
  SplitMix64 rng(derive_seed(o.seed, "bresenham"));
  const int n = o.graph_instances * 40;
  for (int i = 0; i < n; ++i) {
    const Pixel a{rng.uniform_int(0, o.max_size - 1), rng.uniform_int(0, o.max_size - 1)};
    const Pixel b{rng.uniform_int(0, o.max_size - 1), rng.uniform_int(0, o.max_size - 1)};
    ++r.cases;
    const auto ab = geometry::bresenham_line(a, b);
    if (ab != oracle::line(a, b) || ab != geometry::bresenham_line(b, a)) {
      r.worst += 1;
      fail(r, "line mismatch (" + std::to_string(a.row) + "," + std::to_string(a.col) + ")-(" +
                  std::to_string(b.row) + "," + std::to_string(b.col) + ")");
    }
  }
  return r;
}

SuiteResult suite_density(const Options& o) {
  SuiteResult r = make_result("density");
  for (const auto& inst : instances(o, "density")) {
    ++r.cases;
    const Tensor got = geometry::density_from_mask(inst.mask).density;
    const Tensor want = oracle::density(inst.mask);
    for (std::size_t i = 0; i < got.size(); ++i) r.worst = std::max(r.worst, std::fabs(double(got[i]) - want[i]));
  }
  if (r.worst > kWeightTol) fail(r, "density error " + fmt("%.3g", r.worst));
  return r;
}

SuiteResult suite_polar(const Options& o) {
  SuiteResult r = make_result("polar");
  for (const auto& inst : feature_instances(o, "polar")) {
    ++r.cases;
    const auto got = artifact::compute_polar(inst.mask);
    const auto want = oracle::polar(inst.mask);
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (got.nearest[i] != want[i].nearest) fail(r, "nearest-metal mismatch, mask seed " + std::to_string(inst.seed));
      r.worst = std::max({r.worst, std::fabs(got.radius[i] - want[i].radius),
                          angle_diff(got.angle[i], want[i].angle)});
    }
  }
  if (r.worst > kWeightTol) fail(r, "polar error " + fmt("%.3g", r.worst));
  return r;
}

SuiteResult suite_weights(const Options& o) {
  SuiteResult r = make_result("angular-weight");
  SplitMix64 rng(derive_seed(o.seed, "weights"));
  std::vector<std::pair<double, double>> angles = {
      {std::numbers::pi, -std::numbers::pi + 1e-3}, {0.0, 0.0}, {1.0, -1.0}, {3.0, -3.0}};
  for (int i = 0; i < o.graph_instances * 20; ++i)
    angles.push_back({rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(-std::numbers::pi, std::numbers::pi)});
  for (auto [a, b] : angles) {
    ++r.cases;
    const float fa = static_cast<float>(a), fb = static_cast<float>(b);
    r.worst = std::max(r.worst, std::fabs(artifact::angular_weight(fa, fb, o.sigma) -
                                          oracle::angular_weight(fa, fb, kReferenceSigma)));
    const float ra = static_cast<float>(std::fabs(a) * 5), rb = static_cast<float>(std::fabs(b) * 5);
    r.worst = std::max(r.worst, std::fabs(artifact::radial_weight(ra, rb, o.sigma) -
                                          oracle::radial_weight(ra, rb, kReferenceSigma)));
  }
  if (r.worst > 1e-6) fail(r, "weight error " + fmt("%.3g", r.worst));
  return r;
}

SuiteResult suite_topk(const Options& o) {
  SuiteResult r = make_result("topk-adjacency");
  artifact::ArtifactGraphOptions opts;
  opts.sigma = o.sigma;
  for (const auto& inst : feature_instances(o, "topk")) {
    ++r.cases;
    const auto polar = artifact::compute_polar(inst.mask);
    const auto got = artifact::select_polar_edges(polar, opts);
    const auto want = oracle::topk_edges(polar.radius, polar.angle, opts.k_angular, opts.k_radial, kReferenceSigma);
    if (got.size() != want.size()) {
      fail(r, "edge count " + std::to_string(got.size()) + " vs " + std::to_string(want.size()));
      r.worst = std::max(r.worst, 1.0);
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].from != want[i].from || got[i].to != want[i].to) {
        fail(r, "edge set differs, mask seed " + std::to_string(inst.seed));
        r.worst = std::max(r.worst, 1.0);
        break;
      }
      r.worst = std::max(r.worst, static_cast<double>(std::fabs(got[i].weight - want[i].weight)));
    }
    const int n = polar.node_count();
    const auto adj = artifact::SparseAdjacency::from_directed(n, got);
    const Tensor dense = adj.to_dense();
    const auto ref = oracle::normalized_dense(n, got);
    for (std::size_t i = 0; i < ref.size(); ++i) r.worst = std::max(r.worst, std::fabs(dense[i] - ref[i]));
  }
  if (r.passed && r.worst > kWeightTol) fail(r, "weight error " + fmt("%.3g", r.worst));
  return r;
}

SuiteResult suite_structure(const Options& o) {
  SuiteResult r = make_result("adjacency-structure");
  artifact::ArtifactGraphOptions opts;
  opts.sigma = o.sigma;
  const int cap = opts.k_angular + opts.k_radial;
  for (const auto& inst : feature_instances(o, "structure")) {
    ++r.cases;
    const auto density = geometry::density_from_mask(inst.mask);
    const int n_impl = density.implants.count();
    const auto g = artifact::build_artifact_graph(artifact::compute_polar(inst.mask), density.density, n_impl, opts);
    if (g.max_out_degree > cap) fail(r, "out-degree " + std::to_string(g.max_out_degree) + " above cap");
    if (g.density_reweighted != (n_impl >= 2)) fail(r, "reweighting flag disagrees with implant count");
    const Tensor d = g.adjacency.to_dense();
    const int n = d.dim(0);
    for (int i = 0; i < n; ++i) {
      if (d.at(i, i) != 0.0f) fail(r, "nonzero diagonal");
      for (int j = i + 1; j < n; ++j) r.worst = std::max(r.worst, static_cast<double>(std::fabs(d.at(i, j) - d.at(j, i))));
    }
  }
  if (r.worst > 1e-6) fail(r, "asymmetry " + fmt("%.3g", r.worst));
  return r;
}

// ---- Gradients ---------------------------------------------------------------

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::uint64_t)> inputs;
  gradcheck::OpFn op;
  double step = 1e-3;
  bool linear = false;
};

artifact::SparseAdjacency random_adjacency(std::uint64_t seed, int h, int w) {
  BinaryMask m = oracle::random_mask(seed, h, w, 3);
  if (!m.any()) m.set(0, 0);
  const auto density = geometry::density_from_mask(m);
  return artifact::build_artifact_graph(artifact::compute_polar(m), density.density, density.implants.count())
      .adjacency;
}

std::vector<OpCase> op_cases() {
  using gradcheck::random_tensor;
  auto pair = [](Shape s) {
    return [s](std::uint64_t seed) {
      return std::vector<Tensor>{random_tensor(s, seed), random_tensor(s, seed + 1)};
    };
  };
  auto one = [](Shape s, float lo = -1.0f, float hi = 1.0f, float min_abs = 0.0f) {
    return [=](std::uint64_t seed) { return std::vector<Tensor>{random_tensor(s, seed, lo, hi, min_abs)}; };
  };
  auto conv_inputs = [](int cin, int cout, int k) {
    return [=](std::uint64_t seed) {
      return std::vector<Tensor>{random_tensor({2, cin, 7, 6}, seed), random_tensor({cout, cin, k, k}, seed + 1),
                                 random_tensor({cout}, seed + 2)};
    };
  };
  std::vector<OpCase> cases;
  cases.push_back({"add", pair({2, 3, 4, 4}), [](ad::Tape& t, auto v) { return ad::add(t, v[0], v[1]); }});
  cases.push_back({"sub", pair({2, 3, 4, 4}), [](ad::Tape& t, auto v) { return ad::sub(t, v[0], v[1]); }});
  cases.push_back({"mul", pair({2, 3, 4, 4}), [](ad::Tape& t, auto v) { return ad::mul(t, v[0], v[1]); }});
  cases.push_back({"scale", one({2, 3, 4, 4}), [](ad::Tape& t, auto v) { return ad::scale(t, v[0], -1.7f); }});
  cases.push_back(
      {"relu", one({2, 3, 4, 4}, -1.0f, 1.0f, 0.05f), [](ad::Tape& t, auto v) { return ad::relu(t, v[0]); }});
  cases.push_back({"conv2d_3x3", conv_inputs(3, 4, 3),
                   [](ad::Tape& t, auto v) { return ad::conv2d(t, v[0], v[1], v[2], 1); }});
  cases.push_back({"conv2d_3x3_stride2", conv_inputs(3, 4, 3),
                   [](ad::Tape& t, auto v) { return ad::conv2d(t, v[0], v[1], v[2], 2); }});
  cases.push_back({"conv2d_1x1", conv_inputs(3, 4, 1),
                   [](ad::Tape& t, auto v) { return ad::conv2d(t, v[0], v[1], v[2], 1); }});
  cases.push_back({"batch_norm",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({3, 2, 4, 4}, s), random_tensor({2}, s + 1, 0.5f, 1.5f),
                                                random_tensor({2}, s + 2)};
                   },
                   [](ad::Tape& t, auto v) {
                     ad::BatchNormState st{Tensor({2}), Tensor({2}, 1.0f)};
                     return ad::batch_norm(t, v[0], v[1], v[2], st, true);
                   }});
  cases.push_back({"softmax_channels", one({2, 3, 4, 4}, -2.0f, 2.0f),
                   [](ad::Tape& t, auto v) { return ad::softmax_channels(t, v[0]); }});
  cases.push_back({"sinusoidal_embed", one({2, 1, 4, 4}, -3.0f, 3.0f),
                   [](ad::Tape& t, auto v) { return ad::sinusoidal_embed(t, v[0], 6); }, 1e-3});
  cases.push_back({"graph_propagate", one({2, 3, 5, 6}),
                   [](ad::Tape& t, auto v) {
                     static const auto a0 = random_adjacency(11, 5, 6);
                     static const auto a1 = random_adjacency(12, 5, 6);
                     const artifact::SparseAdjacency* adj[] = {&a0, &a1};
                     return ad::graph_propagate(t, adj, v[0]);
                   }});
  cases.push_back({"gcn_layer",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 3, 5, 6}, s), random_tensor({4, 3, 1, 1}, s + 1),
                                                random_tensor({4}, s + 2)};
                   },
                   [](ad::Tape& t, auto v) {
                     static const auto a0 = random_adjacency(21, 5, 6);
                     static const auto a1 = random_adjacency(22, 5, 6);
                     const artifact::SparseAdjacency* adj[] = {&a0, &a1};
                     return ad::gcn_layer(t, adj, v[0], v[1], v[2]);
                   }});
  cases.push_back({"route_and_fuse",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 3, 4, 4}, s, 0.0f, 1.0f),
                                                random_tensor({2, 5, 4, 4}, s + 1), random_tensor({2, 5, 4, 4}, s + 2),
                                                random_tensor({2, 5, 4, 4}, s + 3)};
                   },
                   [](ad::Tape& t, auto v) {
                     const ad::Var experts[] = {v[1], v[2], v[3]};
                     return ad::route_and_fuse(t, v[0], experts);
                   }});
  cases.push_back({"upsample_nearest", one({2, 3, 3, 4}),
                   [](ad::Tape& t, auto v) { return ad::upsample_nearest(t, v[0], 2); }});
  cases.push_back({"resize_bilinear_up", one({2, 2, 4, 5}),
                   [](ad::Tape& t, auto v) { return ad::resize_bilinear(t, v[0], 7, 9); }});
  cases.push_back({"resize_bilinear_down", one({2, 2, 8, 8}),
                   [](ad::Tape& t, auto v) { return ad::resize_bilinear(t, v[0], 3, 5); }});
  cases.push_back({"concat_channels",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 2, 3, 3}, s), random_tensor({2, 3, 3, 3}, s + 1)};
                   },
                   [](ad::Tape& t, auto v) {
                     const ad::Var in[] = {v[0], v[1]};
                     return ad::concat_channels(t, in);
                   }});
  cases.push_back({"slice_channels", one({2, 5, 3, 3}),
                   [](ad::Tape& t, auto v) { return ad::slice_channels(t, v[0], 1, 3); }});
  cases.push_back({"minmax_normalize",
                   [](std::uint64_t s) {
                     // Plant a clear minimum and maximum so small steps keep the argmin/argmax.
                     Tensor x = gradcheck::random_tensor({2, 2, 4, 4}, s, -0.5f, 0.5f);
                     for (int p = 0; p < 4; ++p) {
                       x[p * 16 + 3] = -1.5f;
                       x[p * 16 + 9] = 1.5f;
                     }
                     return std::vector<Tensor>{x};
                   },
                   [](ad::Tape& t, auto v) { return ad::minmax_normalize(t, v[0]); }});
  cases.push_back({"mean_abs_error",
                   [](std::uint64_t s) {
                     Tensor a = gradcheck::random_tensor({2, 1, 4, 4}, s);
                     Tensor d = gradcheck::random_tensor({2, 1, 4, 4}, s + 1, -1.0f, 1.0f, 0.05f);
                     Tensor b(a.shape());
                     for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] + d[i];
                     return std::vector<Tensor>{a, b};
                   },
                   [](ad::Tape& t, auto v) { return ad::mean_abs_error(t, v[0], v[1]); }});
  cases.push_back({"mean_squared_error", pair({2, 1, 4, 4}),
                   [](ad::Tape& t, auto v) { return ad::mean_squared_error(t, v[0], v[1]); }});
  cases.push_back({"kl_divergence",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({2, 1, 4, 4}, s, 0.1f, 1.0f),
                                                random_tensor({2, 1, 4, 4}, s + 1, 0.1f, 1.0f)};
                   },
                   [](ad::Tape& t, auto v) { return ad::kl_divergence(t, v[0], v[1]); }, 1e-3});
  cases.push_back({"weighted_sum", one({2, 3, 4, 4}),
                   [](ad::Tape& t, auto v) {
                     return ad::weighted_sum(t, v[0], gradcheck::random_tensor({2, 3, 4, 4}, 99));
                   }});
  cases.push_back({"select_sample", one({3, 2, 4, 4}),
                   [](ad::Tape& t, auto v) { return ad::select_sample(t, v[0], 1); }});
  cases.push_back({"weighted_scalar_sum",
                   [](std::uint64_t s) {
                     return std::vector<Tensor>{random_tensor({1}, s), random_tensor({1}, s + 1)};
                   },
                   [](ad::Tape& t, auto v) {
                     const ad::Var in[] = {v[0], v[1]};
                     const float f[] = {0.3f, -2.0f};
                     return ad::weighted_scalar_sum(t, in, f);
                   }});
  cases.push_back({"alignment_loss_mse",
                   [](std::uint64_t s) {
                     Tensor x = gradcheck::random_tensor({2, 1, 4, 4}, s, -0.5f, 0.5f);
                     for (int p = 0; p < 2; ++p) {
                       x[p * 16 + 5] = -1.5f;
                       x[p * 16 + 10] = 1.5f;
                     }
                     return std::vector<Tensor>{x};
                   },
                   [](ad::Tape& t, auto v) {
                     const Tensor g = gradcheck::random_tensor({2, 1, 4, 4}, 7, 0.0f, 1.0f);
                     const int n[] = {2, 3};
                     return alignment_loss(t, v[0], g, n, AlignmentVariant::kMse);
                   }});
  for (OpCase& c : cases) {
    c.linear = c.name == "add" || c.name == "sub" || c.name == "mul" || c.name == "scale" ||
               c.name.starts_with("conv2d") || c.name == "graph_propagate" || c.name == "gcn_layer" ||
               c.name == "route_and_fuse" || c.name == "upsample_nearest" || c.name.starts_with("resize_bilinear") ||
               c.name == "concat_channels" || c.name == "slice_channels" || c.name == "weighted_sum" ||
               c.name == "select_sample" || c.name == "weighted_scalar_sum";
    // Larger steps cost nothing in accuracy here and keep rounding below the tighter bound.
    if (c.linear) c.step = 1e-2;
  }
  return cases;
}

SuiteResult suite_gradients(const Options& o) {
  SuiteResult r = make_result("gradients");
  for (const OpCase& c : op_cases()) {
    for (int s = 0; s < o.grad_seeds; ++s) {
      ++r.cases;
      const std::uint64_t seed = derive_seed(o.seed, c.name) + static_cast<std::uint64_t>(s) * 1000;
      gradcheck::Options go;
      go.step = c.step;
      go.seed = seed;
      const auto res = gradcheck::check(c.op, c.inputs(seed), go);
      if (res.rel_error > r.worst) r.worst = res.rel_error;
      const double tol = c.linear ? kLinearGradTol : kGradTol;
      if (!(res.rel_error < tol)) fail(r, c.name + " rel err " + fmt("%.3g", res.rel_error));
    }
  }
  return r;
}

SuiteResult suite_graphmoe_gradient(const Options& o) {
  SuiteResult r = make_result("graphmoe-gradient");
  for (int s = 0; s < o.grad_seeds; ++s) {
    ++r.cases;
    const std::uint64_t seed = derive_seed(o.seed, "graphmoe") + static_cast<std::uint64_t>(s);
    constexpr int kC = 6, kH = 8, kW = 8;
    GraphMoeConfig cfg;
    cfg.graph.sigma = o.sigma;
    GraphMoE moe("moe", kC, cfg, seed);
    std::vector<ad::Parameter*> params;
    moe.collect(params);
    // Zero-initialized weights would hide most paths, and zero biases put the
    // relus exactly on their kink at metal pixels and isolated nodes.
    moe.router.weight.value = gradcheck::random_tensor(moe.router.weight.value.shape(), seed + 1, -0.5f, 0.5f);
    moe.project.weight.value = gradcheck::random_tensor(moe.project.weight.value.shape(), seed + 2, -0.5f, 0.5f);
    std::uint64_t bias_seed = seed + 100;
    for (ad::Parameter* p : params) {
      // Pre-activations of the expert and message relus crowd around zero; a
      // positive shift keeps most of them away from the kink while some stay
      // inactive.
      if (p == &moe.gcn.bias || p->name.ends_with(".beta"))
        p->value = gradcheck::random_tensor(p->value.shape(), bias_seed++, 1.0f, 2.0f);
      else if (p->name.ends_with(".bias"))
        p->value = gradcheck::random_tensor(p->value.shape(), bias_seed++, -0.5f, 0.5f, 0.05f);
    }

    std::vector<ScaleContext> ctx;
    for (int n = 0; n < 2; ++n) {
      BinaryMask m = oracle::random_mask(seed * 7 + n, 2 * kH, 2 * kW, 3);
      if (!m.any()) m.set(3, 3);
      const auto d = geometry::density_from_mask(m);
      ctx.push_back(prepare_scale_context(m, d.density, d.implants.count(), kH, kW, cfg.graph));
    }
    const ScaleContext* cp[] = {&ctx[0], &ctx[1]};
    auto run = [&](ad::Tape& t, ad::Var z) {
      const GraphMoeOutput out = moe.forward(t, z, cp, true);
      const ad::Var parts[] = {out.output, out.routing, out.scale_map};
      return ad::concat_channels(t, parts);
    };
    gradcheck::Options go;
    go.seed = seed;
    // Input gradients are small, so rounding noise needs the larger step;
    // radial weights are scaled by pixel radii downstream and need the smaller.
    go.step = 3e-3;
    go.kink_tolerance = 3e-3;
    go.kink_floor = 0.1;
    const auto input = gradcheck::check([&](ad::Tape& t, auto v) { return run(t, v[0]); },
                                        {gradcheck::random_tensor({2, kC, kH, kW}, seed + 3)}, go);
    const Tensor z = gradcheck::random_tensor({2, kC, kH, kW}, seed + 3);
    go.max_coords = 16;
    go.step = 1e-3;
    const auto par = gradcheck::check_parameters([&](ad::Tape& t) { return run(t, t.constant(z)); }, params, go);
    const double worst = std::max(input.rel_error, par.rel_error);
    r.worst = std::max(r.worst, worst);
    const int skipped = input.skipped + par.skipped;
    const int total = skipped + input.coords + par.coords;
    if (!(worst < kGradTol))
      fail(r, "seed " + std::to_string(s) + " rel err input " + fmt("%.3g", input.rel_error) + " params " +
                  fmt("%.3g", par.rel_error) + " (skipped " + std::to_string(skipped) + "/" + std::to_string(total) +
                  ")");
    if (skipped * 2 > total)
      fail(r, "seed " + std::to_string(s) + " skipped " + std::to_string(skipped) + "/" + std::to_string(total) +
                  " coordinates at relu kinks");
  }
  return r;
}

// ---- Metrics and fusion --------------------------------------------------------

SuiteResult suite_metrics(const Options& o) {
  SuiteResult r = make_result("metrics");
  SplitMix64 rng(derive_seed(o.seed, "metrics"));
  double psnr_worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    ++r.cases;
    const int h = rng.uniform_int(11, 24), w = rng.uniform_int(11, 24);
    const Tensor a = gradcheck::random_tensor({h, w}, rng.next(), 0.0f, 1.0f);
    Tensor b = gradcheck::random_tensor({h, w}, rng.next(), 0.0f, 1.0f);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = 0.7f * a[k] + 0.3f * b[k];
    r.worst = std::max(r.worst, std::fabs(ssim(a, b, 1.0) - oracle::ssim(a, b, 1.0)));
    // A constant offset d gives PSNR = 20 log10(R / d).
    const double d = rng.uniform(0.01, 0.2);
    Tensor c = a;
    for (float& v : c.data()) v = static_cast<float>(v + d);
    // Offsets are applied in float, so allow for rounding of the shifted image.
    psnr_worst = std::max(psnr_worst, std::fabs(psnr(a, c, 1.0) - 20.0 * std::log10(1.0 / d)));
  }
  ++r.cases;
  if (std::fabs(ssim(Tensor({16, 16}, 0.3f), Tensor({16, 16}, 0.3f), 1.0) - 1.0) > 1e-12) fail(r, "ssim(x,x) != 1");
  ++r.cases;
  const double g1 = normalized_gain(43.89, 40.54, 33.71, 50.0);
  const double g2 = normalized_gain(39.44, 37.35, 26.94, 50.0);
  if (std::fabs(g1 - 20.6) > 0.05 || std::fabs(g2 - 9.1) > 0.05)
    fail(r, "normalized gain " + fmt("%.3f", g1) + " / " + fmt("%.3f", g2));
  if (r.worst > 1e-6) fail(r, "ssim error " + fmt("%.3g", r.worst));
  if (psnr_worst > 1e-3) fail(r, "psnr error " + fmt("%.3g", psnr_worst) + " dB");
  return r;
}

SuiteResult suite_fusion(const Options& o) {
  SuiteResult r = make_result("fusion");
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t s = derive_seed(o.seed, "fusion") + static_cast<std::uint64_t>(i);
    const Tensor x = gradcheck::random_tensor({9, 7}, s, -1000.0f, 3000.0f);
    const Tensor y = gradcheck::random_tensor({9, 7}, s + 1, -1000.0f, 3000.0f);
    const Tensor a = gradcheck::random_tensor({9, 7}, s + 2, 0.0f, 1.0f);
    r.cases += 3;
    if (clinical_fuse(x, y, a, {0.5f, 1.0f}) != y) fail(r, "tau = 1 does not return the prediction");
    if (clinical_fuse(x, y, Tensor({9, 7}, 1.0f), {0.5f, 0.3f}) != y) fail(r, "full mask does not return the prediction");
    if (clinical_fuse(x, y, Tensor({9, 7}, 0.0f), {0.5f, 0.0f}) != x) fail(r, "empty mask, tau = 0 does not return input");
  }
  return r;
}

using SuiteFn = SuiteResult (*)(const Options&);

const std::vector<std::pair<std::string, SuiteFn>>& registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> suites = {
      {"components", suite_components},
      {"boundary", suite_boundary},
      {"bresenham", suite_bresenham},
      {"density", suite_density},
      {"polar", suite_polar},
      {"angular-weight", suite_weights},
      {"topk-adjacency", suite_topk},
      {"adjacency-structure", suite_structure},
      {"gradients", suite_gradients},
      {"graphmoe-gradient", suite_graphmoe_gradient},
      {"metrics", suite_metrics},
      {"fusion", suite_fusion},
  };
  return suites;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : registry()) out.push_back(name);
  return out;
}

SuiteResult run_suite(const std::string& name, const Options& options) {
  for (const auto& [n, fn] : registry()) {
    if (n != name) continue;
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r;
    try {
      r = fn(options);
    } catch (const std::exception& e) {
      r.name = name;
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }
  throw std::invalid_argument("unknown selftest suite '" + name + "'");
}

std::vector<SuiteResult> run_all(const Options& options) {
  std::vector<SuiteResult> out;
  for (const auto& name : suite_names()) out.push_back(run_suite(name, options));
  return out;
}

std::string format_table(const std::vector<SuiteResult>& results) {
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof line, "%-22s %-6s %7s %12s %9s  %s\n", "suite", "result", "cases", "worst", "seconds",
                "detail");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-22s %-6s %7d %12.3g %9.2f  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                  r.cases, r.worst, r.seconds, r.detail.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace graphmar::selftest
