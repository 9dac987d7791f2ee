#include "graphmar/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "graphmar/geometry_graph.hpp"
#include "graphmar/rng.hpp"

namespace graphmar::sim {

namespace {

constexpr double kPi = std::numbers::pi;

float bilinear_zero(const Tensor& img, int n, double row, double col) {
  const double fr = std::floor(row);
  const double fc = std::floor(col);
  const int r0 = static_cast<int>(fr);
  const int c0 = static_cast<int>(fc);
  const double wr = row - fr;
  const double wc = col - fc;
  auto px = [&](int r, int c) -> double {
    return (r < 0 || c < 0 || r >= n || c >= n) ? 0.0 : img[static_cast<std::size_t>(r) * n + c];
  };
  return static_cast<float>((1 - wr) * ((1 - wc) * px(r0, c0) + wc * px(r0, c0 + 1)) +
                            wr * ((1 - wc) * px(r0 + 1, c0) + wc * px(r0 + 1, c0 + 1)));
}

void check_square(const Tensor& image) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1))
    throw std::invalid_argument("radon: expected a square 2-D image, got " + shape_to_string(image.shape()));
}

void check_geometry(const ScanGeometry& g) {
  if (g.n_angles < 1 || g.n_detectors < 1) throw std::invalid_argument("scan geometry needs angles and detectors");
}

}  // namespace

Tensor radon(const Tensor& image, const ScanGeometry& geometry) {
  check_square(image);
  check_geometry(geometry);
  const int n = image.dim(0);
  const double center = (n - 1) / 2.0;
  const double det_center = (geometry.n_detectors - 1) / 2.0;
  // Rays are sampled over the whole circle circumscribing the grid.
  const double half_len = std::sqrt(2.0) * n / 2.0 + 1.0;
  constexpr double kStep = 0.5;
  const int n_steps = static_cast<int>(std::ceil(2.0 * half_len / kStep)) + 1;
  // Samples are centred on the detector line so t and -t see mirrored points.
  const double s0 = -0.5 * (n_steps - 1) * kStep;

  Tensor sino({geometry.n_angles, geometry.n_detectors});
  for (int a = 0; a < geometry.n_angles; ++a) {
    const double theta = a * kPi / geometry.n_angles;
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (int k = 0; k < geometry.n_detectors; ++k) {
      const double t = k - det_center;
      double acc = 0.0;
      for (int i = 0; i < n_steps; ++i) {
        const double s = s0 + i * kStep;
        const double x = t * ct - s * st;
        const double y = t * st + s * ct;
        acc += bilinear_zero(image, n, y + center, x + center);
      }
      sino.at(a, k) = static_cast<float>(acc * kStep);
    }
  }
  return sino;
}

Tensor disk_image(int size, double center_row, double center_col, double radius, float value, int supersample) {
  if (size < 1 || supersample < 1) throw std::invalid_argument("disk_image: size and supersample must be positive");
  Tensor out({size, size});
  const double inv = 1.0 / supersample;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      int hits = 0;
      for (int i = 0; i < supersample; ++i)
        for (int j = 0; j < supersample; ++j) {
          const double y = r + (i + 0.5) * inv - 0.5;
          const double x = c + (j + 0.5) * inv - 0.5;
          if (std::hypot(y - center_row, x - center_col) <= radius) ++hits;
        }
      out.at(r, c) = value * static_cast<float>(hits) / static_cast<float>(supersample * supersample);
    }
  }
  return out;
}

bool inside_reconstruction_circle(int row, int col, int size) {
  const double c = (size - 1) / 2.0;
  const double dx = col - c;
  const double dy = row - c;
  return dx * dx + dy * dy <= (size / 2.0) * (size / 2.0);
}

Tensor fbp(const Tensor& sinogram, int size, const ScanGeometry& geometry) {
  check_geometry(geometry);
  if (sinogram.rank() != 2 || sinogram.dim(0) != geometry.n_angles || sinogram.dim(1) != geometry.n_detectors)
    throw std::invalid_argument("fbp: sinogram shape " + shape_to_string(sinogram.shape()) +
                                " does not match the scan geometry");
  if (size < 1) throw std::invalid_argument("fbp: size must be positive");
  const int nd = geometry.n_detectors;

  // Ram-Lak in the spatial domain: h[0] = 1/4, h[odd k] = -1/(pi k)^2.
  std::vector<double> h(static_cast<std::size_t>(2 * nd - 1), 0.0);
  for (int k = -(nd - 1); k <= nd - 1; ++k) {
    double v = 0.0;
    if (k == 0) {
      v = 0.25;
    } else if (k % 2 != 0) {
      v = -1.0 / (kPi * kPi * k * k);
    }
    h[static_cast<std::size_t>(k + nd - 1)] = v;
  }

  std::vector<double> filtered(static_cast<std::size_t>(geometry.n_angles) * nd);
  for (int a = 0; a < geometry.n_angles; ++a) {
    for (int i = 0; i < nd; ++i) {
      double acc = 0.0;
      for (int j = 0; j < nd; ++j) acc += sinogram.at(a, j) * h[static_cast<std::size_t>(i - j + nd - 1)];
      filtered[static_cast<std::size_t>(a) * nd + i] = acc;
    }
  }

  const double center = (size - 1) / 2.0;
  const double det_center = (nd - 1) / 2.0;
  std::vector<double> cs(geometry.n_angles), sn(geometry.n_angles);
  for (int a = 0; a < geometry.n_angles; ++a) {
    cs[a] = std::cos(a * kPi / geometry.n_angles);
    sn[a] = std::sin(a * kPi / geometry.n_angles);
  }
  Tensor out({size, size});
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (!inside_reconstruction_circle(r, c, size)) continue;
      const double x = c - center;
      const double y = r - center;
      double acc = 0.0;
      for (int a = 0; a < geometry.n_angles; ++a) {
        const double u = x * cs[a] + y * sn[a] + det_center;
        const double fu = std::floor(u);
        const int k = static_cast<int>(fu);
        const double w = u - fu;
        const double* row = &filtered[static_cast<std::size_t>(a) * nd];
        const double lo = (k >= 0 && k < nd) ? row[k] : 0.0;
        const double hi = (k + 1 >= 0 && k + 1 < nd) ? row[k + 1] : 0.0;
        acc += (1 - w) * lo + w * hi;
      }
      out.at(r, c) = static_cast<float>(acc * kPi / geometry.n_angles);
    }
  }
  return out;
}

Tensor corrupt_metal(const Tensor& sinogram, const Tensor& metal_sinogram, double beta, double gamma) {
  if (sinogram.shape() != metal_sinogram.shape()) throw std::invalid_argument("corrupt_metal: geometry mismatch");
  Tensor out = sinogram;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double pm = metal_sinogram[i];
    if (pm > 0.0) {
      const double p = sinogram[i];
      out[i] = static_cast<float>(p * (1.0 + beta * pm) + gamma * pm * pm);
    }
  }
  return out;
}

Tensor hu_to_mu(const Tensor& hu, double mu_water) {
  Tensor out(hu.shape());
  for (std::size_t i = 0; i < hu.size(); ++i) out[i] = static_cast<float>((hu[i] + 1000.0) / 1000.0 * mu_water);
  return out;
}

Tensor mu_to_hu(const Tensor& mu, double mu_water) {
  Tensor out(mu.shape());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = static_cast<float>(mu[i] / mu_water * 1000.0 - 1000.0);
  return out;
}

bool Ellipse::contains(double row, double col) const {
  const double dx = col - cx;
  const double dy = row - cy;
  const double u = dx * std::cos(angle) + dy * std::sin(angle);
  const double v = -dx * std::sin(angle) + dy * std::cos(angle);
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

HuImage Phantom::render_tissue() const {
  HuImage img(size, size, -1000.0f);
  for (const Ellipse& e : tissue)
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (e.contains(r, c)) img.set(r, c, e.hu);
  return img;
}

HuImage Phantom::render() const {
  HuImage img = render_tissue();
  for (const Ellipse& e : implants)
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (e.contains(r, c)) img.set(r, c, e.hu);
  return img;
}

Tensor Phantom::implant_hu_excess() const {
  const HuImage tissue_img = render_tissue();
  const HuImage full = render();
  Tensor out({size, size});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) out.at(r, c) = full.at(r, c) - tissue_img.at(r, c);
  return out;
}

Phantom random_phantom(std::uint64_t seed, const PhantomOptions& o) {
  if (o.size < 16) throw std::invalid_argument("phantom size must be at least 16");
  if (o.n_implants < 0 || o.n_implants > 4) throw std::invalid_argument("implants per image must be in 0..4");
  if (o.implant_hu_min < geometry::kMetalThresholdHu)
    throw std::invalid_argument("implant HU must not be below the metal threshold");
  SplitMix64 rng(seed);
  Phantom p;
  p.size = o.size;
  const double n = o.size;
  const double mid = (n - 1) / 2.0;

  // Body outline, then a few internal structures.
  const double body_a = n * rng.uniform(0.36, 0.43);
  const double body_b = n * rng.uniform(0.30, 0.40);
  const Ellipse body{mid + rng.uniform(-1, 1), mid + rng.uniform(-1, 1), body_a, body_b, rng.uniform(-0.3, 0.3),
                     static_cast<float>(rng.uniform(20, 60))};
  p.tissue.push_back(body);

  const int n_struct = rng.uniform_int(2, 5);
  for (int i = 0; i < n_struct; ++i) {
    Ellipse e;
    const double rad = rng.uniform(0.0, 0.55);
    const double phi = rng.uniform(0.0, 2 * kPi);
    e.cx = body.cx + rad * body_a * std::cos(phi);
    e.cy = body.cy + rad * body_b * std::sin(phi);
    e.a = n * rng.uniform(0.04, 0.14);
    e.b = n * rng.uniform(0.04, 0.14);
    e.angle = rng.uniform(0.0, kPi);
    const double kind = rng.uniform();
    if (kind < 0.3) {
      e.hu = static_cast<float>(rng.uniform(-120, -60));  // fat
    } else if (kind < 0.65) {
      e.hu = static_cast<float>(rng.uniform(50, 90));  // organ
    } else if (kind < 0.85) {
      e.hu = static_cast<float>(rng.uniform(300, 1200));  // bone
    } else {
      e.hu = static_cast<float>(rng.uniform(-900, -700));  // air pocket
    }
    p.tissue.push_back(e);
  }

  // Implants: rejection-sample centres inside the body, keeping a gap of at
  // least two pixels so they stay separate 8-connected components.
  const double body_min = std::min(body_a, body_b);
  const double shrink = std::min(1.0, n / 64.0);
  const double edge_margin = std::max(1.0, 3.0 * shrink);
  const double min_gap = std::max(2.5, 4.0 * shrink);
  int attempts = 0;
  while (static_cast<int>(p.implants.size()) < o.n_implants) {
    if (++attempts > 10000) throw std::runtime_error("could not place implants");
    const double rad = rng.uniform(o.implant_radius_min, o.implant_radius_max);
    const double reach = body_min - rad - edge_margin;
    const double cr = reach * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2 * kPi);
    Ellipse e;
    e.cx = body.cx + cr * std::cos(phi);
    e.cy = body.cy + cr * std::sin(phi);
    e.a = rad;
    e.b = rad * rng.uniform(0.7, 1.0);
    e.angle = rng.uniform(0.0, kPi);
    e.hu = static_cast<float>(rng.uniform(o.implant_hu_min, o.implant_hu_max));
    bool ok = true;
    for (const Ellipse& q : p.implants) {
      const double d = std::hypot(q.cx - e.cx, q.cy - e.cy);
      if (d < q.a + e.a + min_gap) ok = false;
    }
    // Must produce at least one pixel.
    bool any = false;
    for (int r = 0; r < o.size && !any; ++r)
      for (int c = 0; c < o.size && !any; ++c) any = e.contains(r, c);
    if (ok && any) p.implants.push_back(e);
  }
  return p;
}

namespace {

void add_streak_bands(const Phantom& p, const std::vector<std::pair<double, double>>& centroids,
                      const SimulationOptions& o, Tensor& x) {
  const int n = p.size;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < centroids.size(); ++j) {
      const auto [r0, c0] = centroids[i];
      const auto [r1, c1] = centroids[j];
      const double dr = r1 - r0;
      const double dc = c1 - c0;
      const double len2 = dr * dr + dc * dc;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          double t = len2 > 0 ? ((r - r0) * dr + (c - c0) * dc) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double d = std::hypot(r - (r0 + t * dr), c - (c0 + t * dc));
          x.at(r, c) -= static_cast<float>(o.streak_amplitude *
                                           std::exp(-0.5 * d * d / (o.streak_width * o.streak_width)));
        }
      }
    }
  }
}

}  // namespace

SimulatedSample simulate(const Phantom& phantom, const SimulationOptions& o) {
  const int n = phantom.size;
  const HuImage digital = phantom.render();
  const BinaryMask mask = geometry::extract_metal_mask(digital);
  const geometry::ImplantSet implants = geometry::connected_components(mask);

  SimulatedSample s;
  s.m = mask.to_tensor();
  s.n_implants = implants.count();
  s.metal_area = static_cast<int>(mask.count());

  if (o.generator == Generator::kAnalytic) {
    s.y = digital.tensor();
    Tensor x = s.y;
    std::vector<std::pair<double, double>> centroids;
    for (const auto& comp : implants.components) {
      double sr = 0, sc = 0;
      for (const Pixel& q : comp) {
        sr += q.row;
        sc += q.col;
      }
      centroids.emplace_back(sr / comp.size(), sc / comp.size());
    }
    add_streak_bands(phantom, centroids, o, x);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (s.m[i] != 0.0f) x[i] = s.y[i];
    s.x = HuImage(std::move(x)).tensor();
    return s;
  }

  const Tensor mu_full = hu_to_mu(digital.tensor(), o.mu_water);
  // Metal-only attenuation: the excess over the tissue it displaced.
  Tensor mu_metal = phantom.implant_hu_excess();
  for (float& v : mu_metal.data()) v = static_cast<float>(v / 1000.0 * o.mu_water);

  const Tensor p = radon(mu_full, o.geometry);
  const Tensor pm = radon(mu_metal, o.geometry);
  const Tensor p_corrupt = corrupt_metal(p, pm, o.beta, o.gamma);

  Tensor y = mu_to_hu(fbp(p, n, o.geometry), o.mu_water);
  Tensor x = mu_to_hu(fbp(p_corrupt, n, o.geometry), o.mu_water);
  s.y = HuImage(std::move(y)).tensor();
  s.x = HuImage(std::move(x)).tensor();
  return s;
}

}  // namespace graphmar::sim
