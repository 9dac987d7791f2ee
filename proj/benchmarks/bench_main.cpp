#include <benchmark/benchmark.h>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/autodiff.hpp"
#include "graphmar/geometry_graph.hpp"
#include "graphmar/graphmoe.hpp"
#include "graphmar/network.hpp"
#include "graphmar/phantom.hpp"
#include "graphmar/rng.hpp"

using namespace graphmar;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  Tensor t(shape);
  SplitMix64 rng(seed);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

BinaryMask two_implants(int size) {
  BinaryMask m(size, size);
  const int a = size / 4, b = 3 * size / 4, r = std::max(1, size / 16);
  for (int dr = -r; dr <= r; ++dr)
    for (int dc = -r; dc <= r; ++dc) {
      m.set(size / 2 + dr, a + dc);
      m.set(size / 2 + dr, b + dc);
    }
  return m;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({4, c, 32, 32}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var out = ad::conv2d(tape, tape.constant(x), tape.constant(w), ad::Var{}, 1);
    benchmark::DoNotOptimize(tape.value(out).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 4LL * 32 * 32 * c * c * 9);
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({4, c, 32, 32}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  const Tensor seed = random_tensor({4, c, 32, 32}, 3);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var xv = tape.leaf(x);
    const ad::Var wv = tape.leaf(w);
    const ad::Var out = ad::conv2d(tape, xv, wv, ad::Var{}, 1);
    tape.backward(out, seed);
    benchmark::DoNotOptimize(tape.grad(wv).data().data());
  }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Arg(16)->Arg(32);

void BM_DensityGraph(benchmark::State& state) {
  const BinaryMask m = two_implants(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(geometry::density_from_mask(m).density.data().data());
}
BENCHMARK(BM_DensityGraph)->Arg(64)->Arg(128);

void BM_ArtifactGraph(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const BinaryMask m = two_implants(n);
  const Tensor density = geometry::density_from_mask(m).density;
  for (auto _ : state) {
    const auto polar = artifact::compute_polar(m);
    benchmark::DoNotOptimize(artifact::build_artifact_graph(polar, density, 2).adjacency.nonzeros());
  }
}
BENCHMARK(BM_ArtifactGraph)->Arg(8)->Arg(16)->Arg(32);

void BM_RadonFbp(benchmark::State& state) {
  const Tensor disk = sim::disk_image(64, 31.5, 31.5, 20.0);
  for (auto _ : state) benchmark::DoNotOptimize(sim::fbp(sim::radon(disk), 64).data().data());
}
BENCHMARK(BM_RadonFbp);

void BM_NetworkForward(benchmark::State& state) {
  BackboneConfig cfg;
  cfg.enable_graphmoe = state.range(0) != 0;
  Network net(cfg, 7);
  const Tensor m = two_implants(64).to_tensor();
  const SampleContext ctx = make_sample_context(m, cfg);
  const SampleContext* contexts[] = {&ctx, &ctx, &ctx, &ctx};
  const Tensor x = random_tensor({4, 1, 64, 64}, 5);
  for (auto _ : state) {
    ad::Tape tape;
    const ForwardResult r = net.forward(tape, tape.constant(x), contexts, true);
    benchmark::DoNotOptimize(tape.value(r.prediction).data().data());
  }
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
