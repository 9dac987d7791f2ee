#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "graphmar/metrics.hpp"
#include "graphmar/rng.hpp"
#include "graphmar/selftest/gradcheck.hpp"

using namespace graphmar;
using graphmar::gradcheck::random_tensor;

namespace {

// Windowed SSIM written directly from the definition, one 2-D window at a time.
double ssim_reference(const Tensor& a, const Tensor& b, double range) {
  const int h = a.dim(0), w = a.dim(1), win = 11, half = 5;
  double g[11][11];
  double gs = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) gs += g[i][j] = std::exp(-((i - half) * (i - half) + (j - half) * (j - half)) / 4.5);
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= h; ++r)
    for (int c = 0; c + win <= w; ++c) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          ma += g[i][j] / gs * a.at(r + i, c + j);
          mb += g[i][j] / gs * b.at(r + i, c + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double da = a.at(r + i, c + j) - ma, db = b.at(r + i, c + j) - mb;
          va += g[i][j] / gs * da * da;
          vb += g[i][j] / gs * db * db;
          cov += g[i][j] / gs * da * db;
        }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("psnr examples") {
  const Tensor a = random_tensor({16, 16}, 1, 0.0f, 1.0f);
  CHECK(psnr(a, a, 1.0) == kPsnrCapDb);
  CHECK(psnr(Tensor({4, 4}, 0.0f), Tensor({4, 4}, 2.0f), 2.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(psnr(a, a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(psnr(a, Tensor({16, 15}), 1.0), std::invalid_argument);

  double prev = kPsnrCapDb + 1;
  SplitMix64 g(3);
  for (double amp : {0.01, 0.05, 0.2}) {
    Tensor noisy = a;
    for (float& v : noisy.data()) v += static_cast<float>(amp * g.normal());
    const double p = psnr(noisy, a, 1.0);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim examples and oracle") {
  const Tensor a = random_tensor({24, 20}, 2, 0.0f, 1.0f);
  CHECK(ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-9));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({24, 20}, seed + 10, 0.0f, 1.0f);
    Tensor y = x;
    SplitMix64 g(seed);
    for (float& v : y.data()) v = 0.7f * v + 0.2f + static_cast<float>(0.1 * g.normal());
    CHECK(std::fabs(ssim(x, y, 1.0) - ssim_reference(x, y, 1.0)) < 1e-4);
  }
  // Images smaller than the window still get a score.
  const Tensor s = random_tensor({6, 6}, 4, 0.0f, 1.0f);
  CHECK(ssim(s, s, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("windowed metrics") {
  const Tensor y = random_tensor({16, 16}, 5, -300.0f, 250.0f);
  const WindowedMetrics same = windowed_metrics(y, y);
  CHECK(same.psnr_full == kPsnrCapDb);
  CHECK(same.psnr_soft == kPsnrCapDb);
  CHECK(same.ssim_full == doctest::Approx(1.0));
  CHECK(same.ssim_soft == doctest::Approx(1.0));

  // Differences confined to bright voxels vanish in the soft-tissue window.
  Tensor bright = y;
  for (int i = 0; i < 20; ++i) bright[i * 7] = 1500.0f + i;
  Tensor bright2 = bright;
  for (int i = 0; i < 20; ++i) bright2[i * 7] = 2500.0f;
  const WindowedMetrics m = windowed_metrics(bright2, bright);
  CHECK(m.psnr_soft == kPsnrCapDb);
  CHECK(m.ssim_soft == doctest::Approx(1.0));
  CHECK(m.psnr_full < kPsnrCapDb);
  CHECK(m.psnr_mean() == doctest::Approx(0.5 * (m.psnr_full + m.psnr_soft)));
  CHECK(m.ssim_mean() == doctest::Approx(0.5 * (m.ssim_full + m.ssim_soft)));

  const Tensor w = apply_window(Tensor({3}, std::vector<float>{-5000.0f, 50.0f, 5000.0f}), kSoftTissueWindow);
  CHECK(w[0] == 0.0f);
  CHECK(w[1] == doctest::Approx(0.5));
  CHECK(w[2] == 1.0f);
}

TEST_CASE("normalized gain") {
  CHECK(normalized_gain(40.54, 40.54, 33.71, 50.0) == 0.0);
  CHECK(normalized_gain(43.89, 40.54, 33.71, 50.0) == doctest::Approx(20.6).epsilon(0.05 / 20.6));
  CHECK(normalized_gain(39.44, 37.35, 26.94, 50.0) == doctest::Approx(9.1).epsilon(0.05 / 9.1));
  CHECK_THROWS_AS(normalized_gain(1.0, 1.0, 50.0, 50.0), std::invalid_argument);
}

TEST_CASE("pearson correlation") {
  const Tensor a = random_tensor({30}, 6);
  Tensor b = a;
  for (float& v : b.data()) v = -2.0f * v + 1.0f;
  CHECK(pearson(a, a) == doctest::Approx(1.0));
  CHECK(pearson(a, b) == doctest::Approx(-1.0));
  CHECK(pearson(a, Tensor({30}, 2.0f)) == 0.0);
}
