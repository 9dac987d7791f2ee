#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "graphmar/resample.hpp"
#include "graphmar/rng.hpp"

using namespace graphmar;

namespace {

BinaryMask random_mask(int h, int w, std::uint64_t seed) {
  SplitMix64 g(seed);
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c, g.uniform() < 0.4);
  return m;
}

Tensor random_map(int h, int w, std::uint64_t seed) {
  SplitMix64 g(seed);
  Tensor t({h, w});
  for (float& v : t.data()) v = static_cast<float>(g.uniform(-3.0, 3.0));
  return t;
}

// Straightforward align-corners-false bilinear sampling written per pixel in double.
double bilinear_oracle(const Tensor& src, int h, int w, int i, int j) {
  const int sh = src.dim(0);
  const int sw = src.dim(1);
  auto coord = [](int i, int in, int out) {
    double s = (i + 0.5) * in / out - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  const double y = coord(i, sh, h);
  const double x = coord(j, sw, w);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, sh - 1);
  const int x1 = std::min(x0 + 1, sw - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  return (1 - fy) * (1 - fx) * src.at(y0, x0) + (1 - fy) * fx * src.at(y0, x1) + fy * (1 - fx) * src.at(y1, x0) +
         fy * fx * src.at(y1, x1);
}

}  // namespace

TEST_CASE("nearest resize of a constant mask") {
  BinaryMask ones(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) ones.set(r, c);
  const BinaryMask out = resize_nearest(ones, 2, 2);
  CHECK(out.height() == 2);
  CHECK(out.count() == 4);
}

TEST_CASE("nearest resize to the same size is a copy") {
  const BinaryMask m = random_mask(7, 5, 3);
  CHECK(resize_nearest(m, 7, 5) == m);
}

TEST_CASE("nearest resize matches the index-map oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BinaryMask m = random_mask(8, 8, seed);
    const BinaryMask out = resize_nearest(m, 4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(out.at(i, j) == m.at(i * 8 / 4, j * 8 / 4));
  }
  const BinaryMask m = random_mask(9, 6, 11);
  const BinaryMask up = resize_nearest(m, 13, 17);
  for (int i = 0; i < 13; ++i)
    for (int j = 0; j < 17; ++j) CHECK(up.at(i, j) == m.at(i * 9 / 13, j * 6 / 17));
  for (std::uint8_t b : up.bits()) CHECK(b <= 1);
}

TEST_CASE("resize rejects empty targets") {
  const BinaryMask m = random_mask(4, 4, 1);
  CHECK_THROWS_AS(resize_nearest(m, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(resize_nearest(m, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(resize_bilinear(Tensor({3, 3}), 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(resize_any(m, 0, 1), std::invalid_argument);
}

TEST_CASE("coarse resize keeps isolated metal pixels") {
  BinaryMask m(16, 16);
  m.set(5, 9);
  CHECK(resize_any(m, 2, 2).count() == 1);
  CHECK(resize_any(m, 2, 2).at(0, 1));
}

TEST_CASE("bilinear resize of a constant map stays constant") {
  const Tensor c({6, 9}, 0.7f);
  for (auto [h, w] : {std::pair{3, 3}, std::pair{12, 5}, std::pair{1, 1}, std::pair{6, 9}}) {
    const Tensor out = resize_bilinear(c, h, w);
    for (float v : out.data()) CHECK(v == doctest::Approx(0.7f).epsilon(1e-6));
  }
}

TEST_CASE("bilinear upsampling of a step is monotone") {
  const Tensor col({2, 1}, std::vector<float>{0.0f, 1.0f});
  const Tensor out = resize_bilinear(col, 4, 1);
  for (int i = 1; i < 4; ++i) CHECK(out.at(i, 0) >= out.at(i - 1, 0));
  CHECK(out.at(0, 0) == 0.0f);
  CHECK(out.at(3, 0) == 1.0f);
}

TEST_CASE("bilinear resize matches a scalar oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor src = random_map(8, 8, seed);
    for (auto [h, w] : {std::pair{5, 5}, std::pair{16, 3}, std::pair{8, 8}}) {
      const Tensor out = resize_bilinear(src, h, w);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) CHECK(std::fabs(out.at(i, j) - bilinear_oracle(src, h, w, i, j)) < 1e-6);
    }
  }
}

TEST_CASE("bilinear output stays inside the source range") {
  const Tensor src = random_map(11, 7, 99);
  const Tensor out = resize_bilinear(src, 23, 4);
  CHECK(out.min() >= src.min());
  CHECK(out.max() <= src.max());
  CHECK(resize_bilinear(src, 11, 7) == src);
}
