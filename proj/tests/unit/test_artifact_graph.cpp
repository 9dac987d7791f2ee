#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/rng.hpp"

using namespace graphmar;
using namespace graphmar::artifact;

namespace {

BinaryMask random_sparse_mask(int h, int w, std::uint64_t seed, double p) {
  SplitMix64 g(seed);
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c, g.uniform() < p);
  if (!m.any()) m.set(g.uniform_int(0, h - 1), g.uniform_int(0, w - 1));
  return m;
}

// Dense O(n^2) construction: score every pair, sort each row, keep the top k.
std::vector<double> dense_oracle(const PolarField& f, int k_ang, int k_rad, double sigma) {
  const int n = f.node_count();
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  auto pick = [&](int i, auto&& score, int k) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < n; ++j)
      if (j != i) cand.push_back({-score(j), j});
    std::sort(cand.begin(), cand.end());
    for (int t = 0; t < k; ++t) a[static_cast<std::size_t>(i) * n + cand[t].second] += -cand[t].first;
  };
  for (int i = 0; i < n; ++i) {
    pick(i, [&](int j) {
      double d = std::fabs(static_cast<double>(f.angle[i]) - f.angle[j]);
      d = std::min(d, 2 * std::numbers::pi - d);
      return static_cast<double>(static_cast<float>(std::exp(-d * d / (2 * sigma * sigma))));
    }, k_ang);
    pick(i, [&](int j) {
      const double d = static_cast<double>(f.radius[i]) - f.radius[j];
      return static_cast<double>(static_cast<float>(std::exp(-d * d / (2 * sigma * sigma))));
    }, k_rad);
  }
  std::vector<double> s(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s[i * n + j] = a[i * n + j] + a[j * n + i];
  std::vector<double> deg(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) deg[i] += s[i * n + j];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double di = deg[i] > 0 ? deg[i] : 1.0;
      const double dj = deg[j] > 0 ? deg[j] : 1.0;
      s[i * n + j] /= std::sqrt(di * dj);
    }
  return s;
}

}  // namespace

TEST_CASE("polar coordinates of a 3-4-5 triangle") {
  BinaryMask m(6, 6);
  m.set(0, 0);
  const PolarField f = compute_polar(m);
  const int node = 4 * 6 + 3;  // row 4, column 3: dx = 3, dy = 4
  CHECK(f.radius[node] == doctest::Approx(5.0));
  CHECK(f.angle[node] == doctest::Approx(std::atan2(4.0, 3.0)).epsilon(1e-6));
  CHECK(f.angle[node] == doctest::Approx(0.9273).epsilon(1e-4));
  CHECK(f.radius[0] == 0.0f);
  CHECK(f.angle[0] == 0.0f);
}

TEST_CASE("polar coordinates require metal") {
  CHECK_THROWS_AS(compute_polar(BinaryMask(4, 4)), EmptyMetalError);
  const PolarField z = zero_polar(3, 5);
  CHECK(z.node_count() == 15);
  CHECK(z.radius_map().max() == 0.0f);
  CHECK(z.angle_map().max() == 0.0f);
}

TEST_CASE("nearest metal matches an exhaustive scan") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const int h = 5 + static_cast<int>(seed % 9);
    const int w = 4 + static_cast<int>(seed % 7);
    const BinaryMask m = random_sparse_mask(h, w, seed, 0.08);
    const PolarField f = compute_polar(m);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        long best = -1;
        Pixel arg{};
        for (int rr = 0; rr < h; ++rr)
          for (int cc = 0; cc < w; ++cc) {
            if (!m.at(rr, cc)) continue;
            const long d2 = static_cast<long>(rr - r) * (rr - r) + static_cast<long>(cc - c) * (cc - c);
            if (best < 0 || d2 < best) {
              best = d2;
              arg = {rr, cc};
            }
          }
        const int node = r * w + c;
        CHECK(f.nearest[node] == arg);
        CHECK(f.radius[node] == doctest::Approx(std::sqrt(static_cast<double>(best))));
        CHECK(f.angle[node] > -std::numbers::pi - 1e-6);
        CHECK(f.angle[node] <= std::numbers::pi + 1e-6);
        if (f.radius[node] == 0.0f) CHECK(m.at(r, c));
      }
  }
}

TEST_CASE("edge weight kernels") {
  CHECK(angular_weight(0.3f, 0.3f) == 1.0f);
  CHECK(angular_weight(0.0f, 2.0f, 2.0f) == doctest::Approx(std::exp(-0.5)));
  CHECK(circular_distance(std::numbers::pi - 0.1, -std::numbers::pi + 0.1) == doctest::Approx(0.2));
  CHECK(angular_weight(static_cast<float>(std::numbers::pi - 0.1), static_cast<float>(-std::numbers::pi + 0.1)) ==
        doctest::Approx(std::exp(-0.04 / 8.0)));
  CHECK(radial_weight(3.0f, 3.0f) == 1.0f);
  CHECK(radial_weight(1.0f, 3.0f, 2.0f) == doctest::Approx(std::exp(-0.5)));
  float prev = 2.0f;
  for (int d = 0; d < 10; ++d) {
    const float w = radial_weight(0.0f, 0.5f * d);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("two-node closed form") {
  const std::vector<Edge> one{{0, 1, 0.37f}};
  const SparseAdjacency a = SparseAdjacency::from_directed(2, one);
  CHECK(a.weight(0, 1) == doctest::Approx(1.0));
  CHECK(a.weight(1, 0) == doctest::Approx(1.0));
  CHECK(a.weight(0, 0) == 0.0f);
}

TEST_CASE("unfinalized adjacency refuses to propagate") {
  const SparseAdjacency a;
  std::vector<float> h(4, 1.0f), out(4);
  CHECK_THROWS_AS(a.propagate(h, 1, out), std::logic_error);
  const SparseAdjacency e = SparseAdjacency::empty(4);
  e.propagate(h, 1, out);
  for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("full adjacency on a 6x6 grid equals the dense oracle") {
  for (Pixel metal : {Pixel{2, 3}, Pixel{0, 0}, Pixel{5, 1}}) {
    BinaryMask m(6, 6);
    m.set(metal.row, metal.col);
    const PolarField f = compute_polar(m);
    const ArtifactGraph g = build_artifact_graph(f, Tensor({6, 6}, 1.0f), 1);
    CHECK_FALSE(g.density_reweighted);
    const std::vector<double> oracle = dense_oracle(f, 12, 4, 2.0);
    const Tensor dense = g.adjacency.to_dense();
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::fabs(dense[i] - oracle[i]) < 1e-5);
  }
}

TEST_CASE("adjacency structure on random masks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BinaryMask m = random_sparse_mask(8, 8, seed + 40, 0.05);
    const PolarField f = compute_polar(m);
    SplitMix64 g(seed);
    Tensor density({8, 8});
    for (float& v : density.data()) v = static_cast<float>(g.uniform());
    const ArtifactGraph ag = build_artifact_graph(f, density, 2);
    CHECK(ag.density_reweighted);
    CHECK(ag.max_out_degree <= 16);

    const Tensor a = ag.adjacency.to_dense();
    const int n = f.node_count();
    for (int i = 0; i < n; ++i) {
      CHECK(a.at(i, i) == 0.0f);
      for (int j = 0; j < n; ++j) {
        CHECK(a.at(i, j) >= 0.0f);
        CHECK(std::fabs(a.at(i, j) - a.at(j, i)) < 1e-6);
      }
    }

    // Reweighting by densities in [0, 1] never increases a directed weight.
    const ArtifactGraph plain = build_artifact_graph(f, density, 1);
    REQUIRE(plain.directed.size() >= ag.directed.size());
    for (const Edge& e : ag.directed) {
      const auto it = std::find_if(plain.directed.begin(), plain.directed.end(),
                                   [&](const Edge& p) { return p.from == e.from && p.to == e.to; });
      REQUIRE(it != plain.directed.end());
      CHECK(e.weight <= it->weight + 1e-7f);
    }

    // Power iteration bounds the spectral radius.
    std::vector<double> v(n, 1.0), w(n);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      double norm = 0.0;
      for (int i = 0; i < n; ++i) {
        w[i] = 0.0;
        for (int j = 0; j < n; ++j) w[i] += a.at(i, j) * v[j];
        norm += w[i] * w[i];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      lambda = norm / std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    }
    CHECK(lambda <= 1.0 + 1e-4);
  }
}

TEST_CASE("selected angular peers dominate the rest") {
  BinaryMask m(7, 7);
  m.set(3, 3);
  m.set(0, 6);
  const PolarField f = compute_polar(m);
  ArtifactGraphOptions opt;
  opt.enable_radial = false;
  const std::vector<Edge> edges = select_polar_edges(f, opt);
  const int n = f.node_count();
  for (int i = 0; i < n; ++i) {
    std::vector<float> chosen;
    std::vector<bool> is_chosen(n, false);
    for (const Edge& e : edges)
      if (e.from == i) {
        chosen.push_back(e.weight);
        is_chosen[e.to] = true;
      }
    REQUIRE(chosen.size() == 12);
    const float worst = *std::min_element(chosen.begin(), chosen.end());
    for (int j = 0; j < n; ++j)
      if (j != i && !is_chosen[j]) CHECK(angular_weight(f.angle[i], f.angle[j]) <= worst);
  }
}

TEST_CASE("degree limits and ablation switches") {
  BinaryMask m(3, 3);
  m.set(1, 1);
  const PolarField f = compute_polar(m);
  ArtifactGraphOptions big;
  big.k_angular = 50;
  big.k_radial = 50;
  const ArtifactGraph g = build_artifact_graph(f, Tensor({3, 3}, 1.0f), 1, big);
  CHECK(g.max_out_degree == 8);

  ArtifactGraphOptions none;
  none.k_angular = 0;
  none.k_radial = 0;
  CHECK(build_artifact_graph(f, Tensor({3, 3}, 1.0f), 1, none).adjacency.nonzeros() == 0);

  ArtifactGraphOptions bad;
  bad.k_angular = -1;
  CHECK_THROWS_AS(build_artifact_graph(f, Tensor({3, 3}, 1.0f), 1, bad), std::invalid_argument);
  CHECK_THROWS_AS(build_artifact_graph(f, Tensor({4, 3}, 1.0f), 1), std::invalid_argument);
}

TEST_CASE("sparse propagation agrees with the dense matrix") {
  BinaryMask m(5, 6);
  m.set(1, 1);
  m.set(4, 5);
  const PolarField f = compute_polar(m);
  const ArtifactGraph g = build_artifact_graph(f, Tensor({5, 6}, 0.5f), 2);
  const Tensor a = g.adjacency.to_dense();
  const int n = f.node_count();
  SplitMix64 rng(1);
  std::vector<float> h(2 * n), out(2 * n), back(2 * n, 0.0f);
  for (float& v : h) v = static_cast<float>(rng.uniform(-1, 1));
  g.adjacency.propagate(h, 2, out);
  g.adjacency.propagate_transpose_add(h, 2, back);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n; ++i) {
      double fwd = 0.0, tr = 0.0;
      for (int j = 0; j < n; ++j) {
        fwd += a.at(i, j) * h[c * n + j];
        tr += a.at(j, i) * h[c * n + j];
      }
      CHECK(out[c * n + i] == doctest::Approx(fwd).epsilon(1e-5));
      CHECK(back[c * n + i] == doctest::Approx(tr).epsilon(1e-5));
    }
}
