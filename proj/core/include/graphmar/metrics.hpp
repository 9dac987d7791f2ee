#pragma once

#include "graphmar/tensor.hpp"

namespace graphmar {

inline constexpr double kPsnrCapDb = 100.0;

/// 10 log10(R^2 / MSE), capped at 100 dB once MSE < R^2 * 1e-10.
double psnr(const Tensor& a, const Tensor& b, double data_range);

/// Mean local SSIM over all positions where an 11x11 Gaussian window
/// (sigma 1.5) fits; K1 = 0.01, K2 = 0.03. Images smaller than the window use
/// the largest odd window that fits.
double ssim(const Tensor& a, const Tensor& b, double data_range);

struct HuWindow {
  float lo;
  float hi;
};

inline constexpr HuWindow kFullRangeWindow{-1024.0f, 3072.0f};
inline constexpr HuWindow kSoftTissueWindow{-200.0f, 300.0f};

/// Clamps to the window then rescales to [0, 1].
Tensor apply_window(const Tensor& hu, HuWindow window);

struct WindowedMetrics {
  double psnr_full = 0.0;
  double ssim_full = 0.0;
  double psnr_soft = 0.0;
  double ssim_soft = 0.0;
  double psnr_mean() const { return 0.5 * (psnr_full + psnr_soft); }
  double ssim_mean() const { return 0.5 * (ssim_full + ssim_soft); }
};

/// PSNR / SSIM of two HU images under the full-range and soft-tissue windows.
WindowedMetrics windowed_metrics(const Tensor& prediction_hu, const Tensor& reference_hu);

/// Pearson correlation over all elements; 0 if either input is constant.
double pearson(const Tensor& a, const Tensor& b);

/// ((v - v_baseline) / (v_ref - v_input)) * 100.
double normalized_gain(double value, double baseline, double input, double reference);

}  // namespace graphmar
