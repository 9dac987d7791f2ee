#include "graphmar/selftest/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "graphmar/rng.hpp"

namespace graphmar::oracle {

namespace {

int find(std::vector<int>& parent, int x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

std::vector<std::vector<Pixel>> components(const BinaryMask& mask) {
  std::vector<Pixel> px;
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      if (mask.at(r, c)) px.push_back({r, c});
  std::vector<int> parent(px.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t i = 0; i < px.size(); ++i)
    for (std::size_t j = i + 1; j < px.size(); ++j)
      if (std::max(std::abs(px[i].row - px[j].row), std::abs(px[i].col - px[j].col)) == 1)
        parent[find(parent, static_cast<int>(i))] = find(parent, static_cast<int>(j));
  std::map<int, std::vector<Pixel>> groups;
  for (std::size_t i = 0; i < px.size(); ++i) groups[find(parent, static_cast<int>(i))].push_back(px[i]);
  std::vector<std::vector<Pixel>> out;
  for (auto& [root, g] : groups) {
    std::sort(g.begin(), g.end());
    out.push_back(std::move(g));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::vector<std::vector<Pixel>> boundaries(const BinaryMask& mask, const std::vector<std::vector<Pixel>>& comps) {
  std::set<Pixel> metal;
  for (const auto& c : comps) metal.insert(c.begin(), c.end());
  auto unset = [&](int r, int c) {
    return r < 0 || c < 0 || r >= mask.height() || c >= mask.width() || !metal.count({r, c});
  };
  std::vector<std::vector<Pixel>> out;
  for (const auto& comp : comps) {
    std::vector<Pixel> b;
    for (const Pixel& p : comp)
      if (unset(p.row - 1, p.col) || unset(p.row + 1, p.col) || unset(p.row, p.col - 1) || unset(p.row, p.col + 1))
        b.push_back(p);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Pixel> line(Pixel a, Pixel b) {
  if (b < a) std::swap(a, b);
  const int dr = b.row - a.row;
  const int dc = b.col - a.col;
  const int major = std::max(std::abs(dr), std::abs(dc));
  const int minor = std::min(std::abs(dr), std::abs(dc));
  const int sr = (dr > 0) - (dr < 0);
  const int sc = (dc > 0) - (dc < 0);
  std::vector<Pixel> out;
  if (major == 0) return {a};
  for (int k = 0; k <= major; ++k) {
    // ceil(k*minor/major - 1/2) in integers.
    const long off = (2L * k * minor + major - 1) / (2L * major);
    if (std::abs(dc) >= std::abs(dr))
      out.push_back({a.row + static_cast<int>(off) * sr, a.col + k * sc});
    else
      out.push_back({a.row + k * sr, a.col + static_cast<int>(off) * sc});
  }
  return out;
}

Tensor density(const BinaryMask& mask) {
  const auto comps = components(mask);
  const auto bnd = boundaries(mask, comps);
  std::vector<double> acc(static_cast<std::size_t>(mask.height()) * mask.width(), 0.0);
  bool any_edge = false;
  for (std::size_t i = 0; i < bnd.size(); ++i)
    for (std::size_t j = i + 1; j < bnd.size(); ++j)
      for (const Pixel& a : bnd[i])
        for (const Pixel& b : bnd[j]) {
          any_edge = true;
          for (const Pixel& p : line(a, b)) acc[static_cast<std::size_t>(p.row) * mask.width() + p.col] += 1.0;
        }
  Tensor out({mask.height(), mask.width()});
  if (!any_edge) return out;
  const double lo = *std::min_element(acc.begin(), acc.end());
  const double hi = *std::max_element(acc.begin(), acc.end());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[i] = hi > lo ? static_cast<float>((acc[i] - lo) / (hi - lo)) : (hi > 0 ? 1.0f : 0.0f);
  return out;
}

std::vector<PolarNode> polar(const BinaryMask& metal) {
  std::vector<PolarNode> out;
  for (int r = 0; r < metal.height(); ++r) {
    for (int c = 0; c < metal.width(); ++c) {
      long best = -1;
      Pixel bp;
      for (int mr = 0; mr < metal.height(); ++mr)
        for (int mc = 0; mc < metal.width(); ++mc) {
          if (!metal.at(mr, mc)) continue;
          const long d2 = static_cast<long>(r - mr) * (r - mr) + static_cast<long>(c - mc) * (c - mc);
          if (best < 0 || d2 < best) {
            best = d2;
            bp = {mr, mc};
          }
        }
      PolarNode n;
      n.nearest = bp;
      n.radius = std::sqrt(static_cast<double>(best));
      n.angle = best == 0 ? 0.0 : std::atan2(static_cast<double>(r - bp.row), static_cast<double>(c - bp.col));
      out.push_back(n);
    }
  }
  return out;
}

double angular_weight(double ti, double tj, double sigma) {
  double d = std::fmod(std::fabs(ti - tj), 2.0 * std::numbers::pi);
  if (d > std::numbers::pi) d = 2.0 * std::numbers::pi - d;
  return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

double radial_weight(double ri, double rj, double sigma) {
  return std::exp(-((ri - rj) * (ri - rj)) / (2.0 * sigma * sigma));
}

std::vector<artifact::Edge> topk_edges(const std::vector<float>& radius, const std::vector<float>& angle, int k_ang,
                                       int k_rad, double sigma) {
  const int n = static_cast<int>(radius.size());
  std::map<std::pair<int, int>, double> acc;
  for (int i = 0; i < n; ++i) {
    for (int kind = 0; kind < 2; ++kind) {
      const int k = std::min(kind == 0 ? k_ang : k_rad, n - 1);
      std::vector<std::pair<double, int>> cand;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        // Scores are rounded to float like the stored weights so ties agree.
        const double w = kind == 0 ? static_cast<float>(angular_weight(angle[i], angle[j], sigma))
                                   : static_cast<float>(radial_weight(radius[i], radius[j], sigma));
        cand.push_back({-w, j});
      }
      std::sort(cand.begin(), cand.end());
      for (int t = 0; t < k; ++t) acc[{i, cand[t].second}] += -cand[t].first;
    }
  }
  std::vector<artifact::Edge> out;
  for (const auto& [key, w] : acc) out.push_back({key.first, key.second, static_cast<float>(w)});
  return out;
}

std::vector<double> normalized_dense(int n, const std::vector<artifact::Edge>& directed) {
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& e : directed) {
    if (e.from == e.to) continue;
    a[static_cast<std::size_t>(e.from) * n + e.to] += e.weight;
    a[static_cast<std::size_t>(e.to) * n + e.from] += e.weight;
  }
  std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) deg[i] += a[static_cast<std::size_t>(i) * n + j];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double di = deg[i] > 0 ? deg[i] : 1.0;
      const double dj = deg[j] > 0 ? deg[j] : 1.0;
      a[static_cast<std::size_t>(i) * n + j] /= std::sqrt(di * dj);
    }
  return a;
}

double ssim(const Tensor& a, const Tensor& b, double data_range) {
  const int h = a.dim(0);
  const int w = a.dim(1);
  int win = std::min({11, h, w});
  if (win % 2 == 0) --win;
  const int half = win / 2;
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  double gs = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double d2 = (i - half) * (i - half) + (j - half) * (j - half);
      gs += (g[static_cast<std::size_t>(i) * win + j] = std::exp(-d2 / (2.0 * 1.5 * 1.5)));
    }
  for (double& v : g) v /= gs;
  const double c1 = std::pow(0.01 * data_range, 2);
  const double c2 = std::pow(0.03 * data_range, 2);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= h; ++r)
    for (int c = 0; c + win <= w; ++c) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * win + j];
          ma += wt * a.at(r + i, c + j);
          mb += wt * b.at(r + i, c + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * win + j];
          const double da = a.at(r + i, c + j) - ma;
          const double db = b.at(r + i, c + j) - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

BinaryMask random_mask(std::uint64_t seed, int height, int width, int max_blobs) {
  SplitMix64 rng(seed);
  BinaryMask m(height, width);
  const int blobs = rng.uniform_int(1, max_blobs);
  for (int b = 0; b < blobs; ++b) {
    const int cr = rng.uniform_int(0, height - 1);
    const int cc = rng.uniform_int(0, width - 1);
    const int rad = rng.uniform_int(0, std::max(1, std::min(height, width) / 6));
    const bool disc = rng.uniform() < 0.6;
    for (int r = cr - rad; r <= cr + rad; ++r)
      for (int c = cc - rad; c <= cc + rad; ++c) {
        if (!m.contains(r, c)) continue;
        if (disc && (r - cr) * (r - cr) + (c - cc) * (c - cc) > rad * rad) continue;
        m.set(r, c);
      }
  }
  return m;
}

}  // namespace graphmar::oracle
