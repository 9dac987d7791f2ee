#include "graphmar/resample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graphmar {

namespace {

void check_target(int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize target dimensions must be >= 1");
}

}  // namespace

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  check_target(height, width);
  if (mask.height() < 1 || mask.width() < 1) throw std::invalid_argument("resize source is empty");
  BinaryMask out(height, width);
  for (int i = 0; i < height; ++i) {
    const int si = static_cast<int>(static_cast<long long>(i) * mask.height() / height);
    for (int j = 0; j < width; ++j) {
      const int sj = static_cast<int>(static_cast<long long>(j) * mask.width() / width);
      out.set(i, j, mask.at(si, sj));
    }
  }
  return out;
}

BinaryMask resize_any(const BinaryMask& mask, int height, int width) {
  check_target(height, width);
  BinaryMask out(height, width);
  for (int r = 0; r < mask.height(); ++r) {
    const int ti = static_cast<int>(static_cast<long long>(r) * height / mask.height());
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      const int tj = static_cast<int>(static_cast<long long>(c) * width / mask.width());
      out.set(ti, tj, true);
    }
  }
  return out;
}

std::vector<LinearTap> linear_taps(int source_size, int target_size) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(target_size));
  const double scale = static_cast<double>(source_size) / target_size;
  for (int i = 0; i < target_size; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, source_size - 1);
    const int hi = std::min(lo + 1, source_size - 1);
    taps[i] = {lo, hi, static_cast<float>(src - lo)};
    if (lo == hi) taps[i].weight = 0.0f;
  }
  return taps;
}

Tensor resize_bilinear(const Tensor& map, int height, int width) {
  check_target(height, width);
  if (map.rank() != 2) throw std::invalid_argument("resize_bilinear expects a 2-D map");
  const int sh = map.dim(0);
  const int sw = map.dim(1);
  if (sh < 1 || sw < 1) throw std::invalid_argument("resize source is empty");
  const auto ty = linear_taps(sh, height);
  const auto tx = linear_taps(sw, width);
  Tensor out({height, width});
  for (int i = 0; i < height; ++i) {
    const double wy = ty[i].weight;
    for (int j = 0; j < width; ++j) {
      const double wx = tx[j].weight;
      const double top = (1.0 - wx) * map.at(ty[i].lo, tx[j].lo) + wx * map.at(ty[i].lo, tx[j].hi);
      const double bot = (1.0 - wx) * map.at(ty[i].hi, tx[j].lo) + wx * map.at(ty[i].hi, tx[j].hi);
      out.at(i, j) = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

}  // namespace graphmar
