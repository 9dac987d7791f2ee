#include "graphmar/artifact_graph.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

namespace graphmar::artifact {

Tensor PolarField::radius_map() const { return Tensor({height, width}, radius); }
Tensor PolarField::angle_map() const { return Tensor({height, width}, angle); }

PolarField zero_polar(int height, int width) {
  PolarField f;
  f.height = height;
  f.width = width;
  const auto n = static_cast<std::size_t>(height) * width;
  f.nearest.assign(n, Pixel{});
  f.radius.assign(n, 0.0f);
  f.angle.assign(n, 0.0f);
  return f;
}

PolarField compute_polar(const BinaryMask& metal) {
  if (!metal.any()) throw EmptyMetalError();
  const int h = metal.height();
  const int w = metal.width();
  PolarField f = zero_polar(h, w);
  const int max_ring = std::max(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Expanding Chebyshev rings. Every pixel on ring k is at Euclidean
      // distance >= k, so the scan can stop once k^2 exceeds the best d^2.
      long best_d2 = -1;
      int best_idx = 0;
      for (int k = 0; k <= max_ring; ++k) {
        if (best_d2 >= 0 && static_cast<long>(k) * k > best_d2) break;
        for (int dr = -k; dr <= k; ++dr) {
          const int rr = r + dr;
          if (rr < 0 || rr >= h) continue;
          const bool edge_row = (dr == -k || dr == k);
          const int step = edge_row ? 1 : 2 * k;
          for (int dc = -k; dc <= k; dc += std::max(step, 1)) {
            const int cc = c + dc;
            if (cc < 0 || cc >= w || !metal.at(rr, cc)) continue;
            const long d2 = static_cast<long>(dr) * dr + static_cast<long>(dc) * dc;
            const int idx = rr * w + cc;
            if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
              best_d2 = d2;
              best_idx = idx;
            }
          }
        }
      }
      const std::size_t node = static_cast<std::size_t>(r) * w + c;
      const Pixel p{best_idx / w, best_idx % w};
      const double dx = c - p.col;
      const double dy = r - p.row;
      f.nearest[node] = p;
      f.radius[node] = static_cast<float>(std::sqrt(static_cast<double>(best_d2)));
      f.angle[node] = best_d2 == 0 ? 0.0f : static_cast<float>(std::atan2(dy, dx));
    }
  }
  return f;
}

double circular_distance(double a, double b) {
  const double d = std::fabs(a - b);
  return std::min(d, 2.0 * std::numbers::pi - d);
}

float angular_weight(float theta_i, float theta_j, float sigma) {
  const double d = circular_distance(theta_i, theta_j);
  return static_cast<float>(std::exp(-d * d / (2.0 * static_cast<double>(sigma) * sigma)));
}

float radial_weight(float r_i, float r_j, float sigma) {
  const double d = static_cast<double>(r_i) - r_j;
  return static_cast<float>(std::exp(-d * d / (2.0 * static_cast<double>(sigma) * sigma)));
}

// ---------------------------------------------------------------------------

SparseAdjacency SparseAdjacency::empty(int node_count) {
  SparseAdjacency a;
  a.finalized_ = true;
  a.node_count_ = node_count;
  a.row_offsets_.assign(static_cast<std::size_t>(node_count) + 1, 0);
  a.degrees_.assign(static_cast<std::size_t>(node_count), 0.0);
  return a;
}

SparseAdjacency SparseAdjacency::from_directed(int node_count, std::span<const Edge> directed) {
  std::vector<Edge> sym;
  sym.reserve(directed.size() * 2);
  for (const Edge& e : directed) {
    if (e.from < 0 || e.to < 0 || e.from >= node_count || e.to >= node_count)
      throw std::invalid_argument("edge endpoint out of range");
    if (e.from == e.to || !(e.weight > 0.0f)) continue;
    sym.push_back(e);
    sym.push_back({e.to, e.from, e.weight});
  }
  std::sort(sym.begin(), sym.end(),
            [](const Edge& a, const Edge& b) { return a.from != b.from ? a.from < b.from : a.to < b.to; });

  SparseAdjacency a = empty(node_count);
  std::vector<double> merged;
  for (std::size_t k = 0; k < sym.size();) {
    std::size_t m = k;
    double w = 0.0;
    while (m < sym.size() && sym[m].from == sym[k].from && sym[m].to == sym[k].to) w += sym[m++].weight;
    a.columns_.push_back(sym[k].to);
    merged.push_back(w);
    a.raw_weights_.push_back(static_cast<float>(w));
    ++a.row_offsets_[static_cast<std::size_t>(sym[k].from) + 1];
    a.degrees_[static_cast<std::size_t>(sym[k].from)] += w;
    k = m;
  }
  for (int i = 0; i < node_count; ++i) a.row_offsets_[i + 1] += a.row_offsets_[i];

  a.weights_.resize(merged.size());
  for (int i = 0; i < node_count; ++i) {
    const double di = a.degrees_[i] > 0.0 ? a.degrees_[i] : 1.0;
    for (int k = a.row_offsets_[i]; k < a.row_offsets_[i + 1]; ++k) {
      const double dj = a.degrees_[a.columns_[k]] > 0.0 ? a.degrees_[a.columns_[k]] : 1.0;
      a.weights_[k] = static_cast<float>(merged[k] / std::sqrt(di * dj));
    }
  }
  return a;
}

void SparseAdjacency::require_finalized() const {
  if (!finalized_) throw std::logic_error("adjacency used before finalization");
}

float SparseAdjacency::weight(int i, int j) const {
  require_finalized();
  const auto begin = columns_.begin() + row_offsets_[i];
  const auto end = columns_.begin() + row_offsets_[i + 1];
  const auto it = std::lower_bound(begin, end, j);
  return (it != end && *it == j) ? weights_[static_cast<std::size_t>(it - columns_.begin())] : 0.0f;
}

Tensor SparseAdjacency::to_dense() const {
  require_finalized();
  Tensor d({node_count_, node_count_});
  for (int i = 0; i < node_count_; ++i)
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) d.at(i, columns_[k]) = weights_[k];
  return d;
}

void SparseAdjacency::propagate(std::span<const float> h, int channels, std::span<float> out) const {
  require_finalized();
  const std::size_t n = static_cast<std::size_t>(node_count_);
  for (int c = 0; c < channels; ++c) {
    const float* hc = h.data() + c * n;
    float* oc = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) acc += static_cast<double>(weights_[k]) * hc[columns_[k]];
      oc[i] = static_cast<float>(acc);
    }
  }
}

void SparseAdjacency::propagate_transpose_add(std::span<const float> g, int channels, std::span<float> out) const {
  require_finalized();
  const std::size_t n = static_cast<std::size_t>(node_count_);
  for (int c = 0; c < channels; ++c) {
    const float* gc = g.data() + c * n;
    float* oc = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) oc[columns_[k]] += weights_[k] * gc[i];
  }
}

// ---------------------------------------------------------------------------

namespace {

int clamp_k(int k, int n, const char* what) {
  if (k < 0) throw std::invalid_argument(std::string(what) + " must be >= 0");
  if (k > n - 1) {
    std::cerr << "warning: " << what << "=" << k << " exceeds node count - 1; clamped to " << std::max(n - 1, 0)
              << "\n";
    return std::max(n - 1, 0);
  }
  return k;
}

// Appends the top-k peers of node i ranked by score (descending, ties to the
// smaller index).
template <typename Score>
void top_k(int i, int n, int k, Score&& score, std::vector<int>& scratch, std::vector<float>& scores,
           std::vector<Edge>& out) {
  if (k == 0) return;
  scratch.clear();
  for (int j = 0; j < n; ++j) {
    scores[j] = score(j);
    if (j != i) scratch.push_back(j);
  }
  auto better = [&](int a, int b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end(), better);
  for (int t = 0; t < k; ++t) out.push_back({i, scratch[t], scores[scratch[t]]});
}

}  // namespace

std::vector<Edge> select_polar_edges(const PolarField& polar, const ArtifactGraphOptions& options) {
  const int n = polar.node_count();
  const int k_ang = options.enable_angular ? clamp_k(options.k_angular, n, "k_angular") : 0;
  const int k_rad = options.enable_radial ? clamp_k(options.k_radial, n, "k_radial") : 0;

  std::vector<Edge> picked;
  picked.reserve(static_cast<std::size_t>(n) * (k_ang + k_rad));
  std::vector<int> scratch;
  scratch.reserve(static_cast<std::size_t>(n));
  std::vector<float> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float ti = polar.angle[i];
    const float ri = polar.radius[i];
    top_k(i, n, k_ang, [&](int j) { return angular_weight(ti, polar.angle[j], options.sigma); }, scratch, scores,
          picked);
    top_k(i, n, k_rad, [&](int j) { return radial_weight(ri, polar.radius[j], options.sigma); }, scratch, scores,
          picked);
  }

  std::stable_sort(picked.begin(), picked.end(),
                   [](const Edge& a, const Edge& b) { return a.from != b.from ? a.from < b.from : a.to < b.to; });
  std::vector<Edge> merged;
  merged.reserve(picked.size());
  for (const Edge& e : picked) {
    if (!merged.empty() && merged.back().from == e.from && merged.back().to == e.to)
      merged.back().weight += e.weight;
    else
      merged.push_back(e);
  }
  return merged;
}

ArtifactGraph build_artifact_graph(const PolarField& polar, const Tensor& density, int n_implants,
                                   const ArtifactGraphOptions& options) {
  if (density.rank() != 2 || density.dim(0) != polar.height || density.dim(1) != polar.width)
    throw std::invalid_argument("density map must match the polar grid");
  ArtifactGraph g;
  g.directed = select_polar_edges(polar, options);
  g.density_reweighted = n_implants >= 2 && options.enable_density_reweight;
  if (g.density_reweighted) {
    for (Edge& e : g.directed) {
      const double gi = std::max(0.0f, density[static_cast<std::size_t>(e.from)]);
      const double gj = std::max(0.0f, density[static_cast<std::size_t>(e.to)]);
      e.weight = static_cast<float>(e.weight * std::sqrt(gi * gj));
    }
  }
  std::vector<int> out_degree(static_cast<std::size_t>(polar.node_count()), 0);
  for (const Edge& e : g.directed) ++out_degree[e.from];
  g.max_out_degree = out_degree.empty() ? 0 : *std::max_element(out_degree.begin(), out_degree.end());
  g.adjacency = SparseAdjacency::from_directed(polar.node_count(), g.directed);
  return g;
}

}  // namespace graphmar::artifact
