#include "graphmar/geometry_graph.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <stdexcept>

namespace graphmar::geometry {

BinaryMask extract_metal_mask(const HuImage& image, float threshold_hu) {
  BinaryMask mask(image.height(), image.width());
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c)
      if (image.at(r, c) >= threshold_hu) mask.set(r, c);
  return mask;
}

ImplantSet connected_components(const BinaryMask& mask) {
  ImplantSet out{mask.height(), mask.width(), {}};
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(mask.height()) * mask.width(), 0);
  std::deque<Pixel> queue;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * mask.width() + c;
      if (!mask.at(r, c) || seen[idx]) continue;
      std::vector<Pixel> comp;
      seen[idx] = 1;
      queue.push_back({r, c});
      while (!queue.empty()) {
        const Pixel p = queue.front();
        queue.pop_front();
        comp.push_back(p);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = p.row + dr;
            const int nc = p.col + dc;
            if ((dr == 0 && dc == 0) || !mask.contains(nr, nc) || !mask.at(nr, nc)) continue;
            const std::size_t nidx = static_cast<std::size_t>(nr) * mask.width() + nc;
            if (seen[nidx]) continue;
            seen[nidx] = 1;
            queue.push_back({nr, nc});
          }
        }
      }
      std::sort(comp.begin(), comp.end());
      out.components.push_back(std::move(comp));
    }
  }
  return out;
}

std::size_t BoundarySet::total_pixels() const noexcept {
  std::size_t n = 0;
  for (const auto& b : boundaries) n += b.size();
  return n;
}

BoundarySet boundary_pixels(const ImplantSet& implants) {
  BinaryMask metal(implants.height, implants.width);
  for (const auto& comp : implants.components)
    for (const Pixel& p : comp) metal.set(p.row, p.col);

  auto is_metal = [&](int r, int c) { return metal.contains(r, c) && metal.at(r, c); };

  BoundarySet out{implants.height, implants.width, {}};
  out.boundaries.reserve(implants.components.size());
  for (const auto& comp : implants.components) {
    std::vector<Pixel> border;
    for (const Pixel& p : comp) {
      if (!is_metal(p.row - 1, p.col) || !is_metal(p.row + 1, p.col) || !is_metal(p.row, p.col - 1) ||
          !is_metal(p.row, p.col + 1))
        border.push_back(p);
    }
    out.boundaries.push_back(std::move(border));
  }
  return out;
}

GeometricGraph build_geometric_graph(const BoundarySet& boundaries, int stride) {
  if (stride < 1) throw std::invalid_argument("boundary stride must be >= 1");
  GeometricGraph g{boundaries.height, boundaries.width, {}, {}};
  std::vector<std::vector<Pixel>> sampled;
  sampled.reserve(boundaries.boundaries.size());
  for (const auto& b : boundaries.boundaries) {
    std::vector<Pixel> s;
    for (std::size_t i = 0; i < b.size(); i += static_cast<std::size_t>(stride)) s.push_back(b[i]);
    g.nodes.insert(g.nodes.end(), s.begin(), s.end());
    sampled.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < sampled.size(); ++i)
    for (std::size_t j = i + 1; j < sampled.size(); ++j)
      for (const Pixel& a : sampled[i])
        for (const Pixel& b : sampled[j]) g.edges.push_back({a, b});
  return g;
}

std::vector<Pixel> bresenham_line(Pixel a, Pixel b) {
  // Always walk from the row-major smaller endpoint so raster(a,b) == raster(b,a).
  if (b < a) std::swap(a, b);
  const int dr = std::abs(b.row - a.row);
  const int dc = std::abs(b.col - a.col);
  const int sr = a.row < b.row ? 1 : -1;
  const int sc = a.col < b.col ? 1 : -1;
  std::vector<Pixel> line;
  line.reserve(static_cast<std::size_t>(std::max(dr, dc)) + 1);
  int r = a.row;
  int c = a.col;
  int err = dc - dr;
  while (true) {
    line.push_back({r, c});
    if (r == b.row && c == b.col) break;
    const int e2 = 2 * err;
    if (e2 > -dr) {
      err -= dr;
      c += sc;
    }
    if (e2 < dc) {
      err += dc;
      r += sr;
    }
  }
  return line;
}

std::vector<std::uint32_t> accumulate_traversals(const GeometricGraph& graph, int height, int width) {
  std::vector<std::uint32_t> acc(static_cast<std::size_t>(height) * width, 0);
  auto inside = [&](Pixel p) { return p.row >= 0 && p.col >= 0 && p.row < height && p.col < width; };
  for (const auto& e : graph.edges) {
    if (!inside(e.a) || !inside(e.b)) throw std::invalid_argument("geometric graph node outside the image");
    for (const Pixel& p : bresenham_line(e.a, e.b)) ++acc[static_cast<std::size_t>(p.row) * width + p.col];
  }
  return acc;
}

Tensor rasterize_density(const GeometricGraph& graph, int height, int width) {
  Tensor g({height, width});
  if (graph.edges.empty()) return g;
  const auto acc = accumulate_traversals(graph, height, width);
  const auto [lo_it, hi_it] = std::minmax_element(acc.begin(), acc.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    g.fill(hi > 0 ? 1.0f : 0.0f);
    return g;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) g[i] = static_cast<float>((acc[i] - lo) / (hi - lo));
  return g;
}

DensityResult density_from_mask(const BinaryMask& mask, int stride) {
  DensityResult out;
  out.implants = connected_components(mask);
  out.boundaries = boundary_pixels(out.implants);
  const GeometricGraph graph = build_geometric_graph(out.boundaries, stride);
  out.edge_count = graph.edges.size();
  out.density = rasterize_density(graph, mask.height(), mask.width());
  return out;
}

}  // namespace graphmar::geometry
