#include "graphmar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace graphmar {

namespace {

Tensor as_2d(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) return t.reshaped({t.dim(2), t.dim(3)});
  throw std::invalid_argument("expected a single 2-D image, got " + shape_to_string(t.shape()));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double data_range) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data range must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = static_cast<double>(a[i]) - b[i];
    acc += e * e;
  }
  const double mse = acc / static_cast<double>(a.size());
  const double r2 = data_range * data_range;
  if (mse < r2 * 1e-10) return kPsnrCapDb;
  return 10.0 * std::log10(r2 / mse);
}

double ssim(const Tensor& a_in, const Tensor& b_in, double data_range) {
  if (a_in.shape() != b_in.shape()) throw std::invalid_argument("ssim: shape mismatch");
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data range must be positive");
  const Tensor a = as_2d(a_in);
  const Tensor b = as_2d(b_in);
  const int h = a.dim(0);
  const int w = a.dim(1);
  int win = std::min({11, h, w});
  if (win % 2 == 0) --win;
  const int half = win / 2;
  const double sigma = 1.5;

  // Separable normalized Gaussian.
  std::vector<double> k(static_cast<std::size_t>(win));
  double ks = 0.0;
  for (int i = 0; i < win; ++i) ks += (k[i] = std::exp(-0.5 * ((i - half) * (i - half)) / (sigma * sigma)));
  for (double& v : k) v /= ks;

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const int oh = h - win + 1;
  const int ow = w - win + 1;

  // Horizontal pass over the five moment images, then vertical.
  auto filter = [&](auto&& value) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < ow; ++c) {
        double s = 0.0;
        for (int t = 0; t < win; ++t) s += k[t] * value(r, c + t);
        tmp[static_cast<std::size_t>(r) * ow + c] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double s = 0.0;
        for (int t = 0; t < win; ++t) s += k[t] * tmp[static_cast<std::size_t>(r + t) * ow + c];
        out[static_cast<std::size_t>(r) * ow + c] = s;
      }
    return out;
  };
  const auto mu_a = filter([&](int r, int c) { return static_cast<double>(a.at(r, c)); });
  const auto mu_b = filter([&](int r, int c) { return static_cast<double>(b.at(r, c)); });
  const auto e_aa = filter([&](int r, int c) { return static_cast<double>(a.at(r, c)) * a.at(r, c); });
  const auto e_bb = filter([&](int r, int c) { return static_cast<double>(b.at(r, c)) * b.at(r, c); });
  const auto e_ab = filter([&](int r, int c) { return static_cast<double>(a.at(r, c)) * b.at(r, c); });

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

Tensor apply_window(const Tensor& hu, HuWindow window) {
  Tensor out(hu.shape());
  const double span = static_cast<double>(window.hi) - window.lo;
  for (std::size_t i = 0; i < hu.size(); ++i)
    out[i] = static_cast<float>((std::clamp(hu[i], window.lo, window.hi) - static_cast<double>(window.lo)) / span);
  return out;
}

WindowedMetrics windowed_metrics(const Tensor& prediction_hu, const Tensor& reference_hu) {
  WindowedMetrics m;
  const Tensor pf = apply_window(prediction_hu, kFullRangeWindow);
  const Tensor rf = apply_window(reference_hu, kFullRangeWindow);
  const Tensor ps = apply_window(prediction_hu, kSoftTissueWindow);
  const Tensor rs = apply_window(reference_hu, kSoftTissueWindow);
  m.psnr_full = psnr(pf, rf, 1.0);
  m.ssim_full = ssim(pf, rf, 1.0);
  m.psnr_soft = psnr(ps, rs, 1.0);
  m.ssim_soft = ssim(ps, rs, 1.0);
  return m;
}

double pearson(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: inputs must be non-empty and equal size");
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n;
  const double mb = b.sum() / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double normalized_gain(double value, double baseline, double input, double reference) {
  if (reference == input) throw std::invalid_argument("normalized gain undefined when reference equals input");
  return (value - baseline) / (reference - input) * 100.0;
}

}  // namespace graphmar
