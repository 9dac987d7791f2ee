#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "graphmar/geometry_graph.hpp"
#include "graphmar/metrics.hpp"
#include "graphmar/phantom.hpp"
#include "graphmar/selftest/gradcheck.hpp"

using namespace graphmar;
using namespace graphmar::sim;

namespace {

double psnr_in_circle(const Tensor& rec, const Tensor& ref, double range) {
  const int n = ref.dim(0);
  double se = 0.0;
  int count = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      if (!inside_reconstruction_circle(r, c, n)) continue;
      const double d = rec.at(r, c) - ref.at(r, c);
      se += d * d;
      ++count;
    }
  return 10.0 * std::log10(range * range / (se / count));
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST_CASE("radon of a zero image is zero") {
  const Tensor s = radon(Tensor({32, 32}));
  CHECK(s.shape() == Shape{90, 95});
  CHECK(s.max() == 0.0f);
  CHECK(s.min() == 0.0f);
  CHECK(fbp(Tensor({90, 95}), 32).max() == 0.0f);
}

TEST_CASE("centered disk projects symmetrically") {
  const ScanGeometry g{60, 63};
  const Tensor disk = disk_image(33, 16.0, 16.0, 9.0);
  const Tensor s = radon(disk, g);
  CHECK(s.min() >= 0.0f);
  for (int a = 0; a < g.n_angles; ++a)
    for (int k = 0; k < g.n_detectors; ++k)
      CHECK(std::fabs(s.at(a, k) - s.at(a, g.n_detectors - 1 - k)) < 1e-3);
}

TEST_CASE("a bright pixel traces a sinusoid") {
  const int n = 64;
  const ScanGeometry g;
  for (auto [row, col] : {std::pair{10, 40}, std::pair{50, 20}, std::pair{31, 5}}) {
    Tensor img({n, n});
    img.at(row, col) = 1.0f;
    const Tensor s = radon(img, g);
    const double x = col - (n - 1) / 2.0, y = row - (n - 1) / 2.0;
    for (int a = 0; a < g.n_angles; ++a) {
      const double theta = a * std::numbers::pi / g.n_angles;
      const double expected = x * std::cos(theta) + y * std::sin(theta) + (g.n_detectors - 1) / 2.0;
      int best = 0;
      for (int k = 1; k < g.n_detectors; ++k)
        if (s.at(a, k) > s.at(a, best)) best = k;
      CHECK(std::fabs(best - expected) <= 1.0);
    }
  }
}

TEST_CASE("filtered backprojection round trip on disks") {
  const Tensor d64 = disk_image(64, 31.5, 31.5, 20.0);
  CHECK(psnr_in_circle(fbp(radon(d64), 64), d64, 1.0) >= 25.0);
  const ScanGeometry big{180, 183};
  const Tensor d128 = disk_image(128, 60.0, 66.0, 28.0);
  CHECK(psnr_in_circle(fbp(radon(d128, big), 128, big), d128, 1.0) >= 25.0);
  const Tensor rec = fbp(radon(d64), 64);
  CHECK(rec.at(0, 0) == 0.0f);  // outside the reconstruction circle
}

TEST_CASE("filtered backprojection is linear") {
  const Tensor s1 = gradcheck::random_tensor({90, 95}, 1, 0.0f, 1.0f);
  const Tensor s2 = gradcheck::random_tensor({90, 95}, 2, 0.0f, 1.0f);
  Tensor mix({90, 95});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7f * s1[i] - 1.3f * s2[i];
  const Tensor f1 = fbp(s1, 48), f2 = fbp(s2, 48), fm = fbp(mix, 48);
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::fabs(fm[i] - (0.7f * f1[i] - 1.3f * f2[i])) < 1e-4);
}

TEST_CASE("metal corruption model") {
  const Tensor p = gradcheck::random_tensor({10, 12}, 3, 0.0f, 2.0f);
  Tensor pm = gradcheck::random_tensor({10, 12}, 4, 0.0f, 1.0f);
  for (std::size_t i = 0; i < pm.size(); i += 3) pm[i] = 0.0f;
  CHECK(corrupt_metal(p, pm, 0.0, 0.0) == p);
  CHECK(corrupt_metal(p, Tensor({10, 12}), 0.4, 0.1) == p);
  const Tensor c = corrupt_metal(p, pm, 0.4, 0.1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double expect = pm[i] > 0 ? p[i] * (1 + 0.4 * pm[i]) + 0.1 * pm[i] * pm[i] : p[i];
    CHECK(c[i] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("hu and attenuation conversions invert each other") {
  const Tensor hu({3}, std::vector<float>{-1000.0f, 0.0f, 3000.0f});
  const Tensor mu = hu_to_mu(hu);
  CHECK(mu[0] == 0.0f);
  CHECK(mu[1] == doctest::Approx(kDefaultMuWater));
  const Tensor back = mu_to_hu(mu);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(back[i] - hu[i]) < 1e-3);
}

TEST_CASE("random phantoms") {
  PhantomOptions opt;
  opt.n_implants = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Phantom p = random_phantom(seed, opt);
    CHECK(p.implants.size() == 3);
    for (const Ellipse& e : p.implants) CHECK(e.hu >= geometry::kMetalThresholdHu);
    const HuImage img = p.render();
    CHECK(img.at(0, 0) == -1000.0f);
    CHECK(geometry::connected_components(geometry::extract_metal_mask(img)).count() == 3);
    CHECK(geometry::extract_metal_mask(p.render_tissue()).count() == 0);
  }
  opt.n_implants = 5;
  CHECK_THROWS_AS(random_phantom(0, opt), std::invalid_argument);
}

TEST_CASE("corruption off leaves the reconstruction untouched") {
  PhantomOptions popt;
  const Phantom p = random_phantom(7, popt);
  SimulationOptions sopt;
  sopt.beta = 0.0;
  sopt.gamma = 0.0;
  const SimulatedSample s = simulate(p, sopt);
  CHECK(s.x == s.y);
  CHECK(s.n_implants == 2);
  CHECK(s.metal_area == static_cast<int>(s.m.sum()));
}

TEST_CASE("artifacts grow with beta and are never absent") {
  PhantomOptions popt;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Phantom p = random_phantom(seed + 20, popt);
    double prev = -1.0;
    for (double beta : {0.1, 0.4, 0.8}) {
      SimulationOptions sopt;
      sopt.beta = beta;
      const SimulatedSample s = simulate(p, sopt);
      const double e = mean_abs_diff(s.x, s.y);
      CHECK(e > prev);
      CHECK(e > 0.0);
      prev = e;
    }
  }
}

TEST_CASE("streak energy concentrates between implants") {
  PhantomOptions popt;
  int passes = 0;
  const int trials = 8;
  for (std::uint64_t seed = 0; seed < trials; ++seed) {
    const SimulatedSample s = simulate(random_phantom(seed + 100, popt));
    const auto d = geometry::density_from_mask(BinaryMask::from_tensor(s.m));
    double in = 0.0, out = 0.0;
    int n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.m[i] != 0.0f) continue;
      const double e = std::fabs(s.x[i] - s.y[i]);
      if (d.density[i] > 0.0f) {
        in += e;
        ++n_in;
      } else {
        out += e;
        ++n_out;
      }
    }
    if (n_in > 0 && in / n_in >= 2.0 * out / n_out) ++passes;
  }
  CHECK(passes == trials);
}

TEST_CASE("analytic generator keeps metal and darkens the band") {
  PhantomOptions popt;
  SimulationOptions sopt;
  sopt.generator = Generator::kAnalytic;
  const SimulatedSample s = simulate(random_phantom(3, popt), sopt);
  for (std::size_t i = 0; i < s.x.size(); ++i)
    if (s.m[i] != 0.0f) CHECK(s.x[i] == s.y[i]);
  CHECK(mean_abs_diff(s.x, s.y) > 0.0);
}
