#pragma once

#include <cstdint>
#include <vector>

#include "graphmar/tensor.hpp"

namespace graphmar::sim {

/// Parallel-beam geometry over a square N x N image. Pixel (r, c) sits at
/// x = c - (N-1)/2, y = r - (N-1)/2; detector bin k measures the ray
/// t = x cos(theta) + y sin(theta) = k - (n_detectors-1)/2 with
/// theta_a = a * pi / n_angles. Detector spacing is one pixel.
struct ScanGeometry {
  int n_angles = 90;
  int n_detectors = 95;
};

/// n_angles x n_detectors line integrals, bilinear sampling at half-pixel steps.
Tensor radon(const Tensor& image, const ScanGeometry& geometry = {});

/// Ram-Lak filtered backprojection onto a size x size grid. Pixels outside the
/// reconstruction circle of radius size/2 are zero.
Tensor fbp(const Tensor& sinogram, int size, const ScanGeometry& geometry = {});

/// Inside the metal trace (metal > 0): p' = p (1 + beta p_m) + gamma p_m^2.
Tensor corrupt_metal(const Tensor& sinogram, const Tensor& metal_sinogram, double beta = 0.4, double gamma = 0.1);

/// Uniform disk of the given value, area-sampled on a supersample^2 sub-grid.
Tensor disk_image(int size, double center_row, double center_col, double radius, float value = 1.0f,
                  int supersample = 4);

/// Reconstruction-circle membership used by fbp().
bool inside_reconstruction_circle(int row, int col, int size);

inline constexpr double kDefaultMuWater = 0.05;

/// mu = (HU + 1000) / 1000 * mu_water, and back.
Tensor hu_to_mu(const Tensor& hu, double mu_water = kDefaultMuWater);
Tensor mu_to_hu(const Tensor& mu, double mu_water = kDefaultMuWater);

struct Ellipse {
  double cx = 0.0;  // column
  double cy = 0.0;  // row
  double a = 1.0;   // semi-axis along the rotated x direction
  double b = 1.0;
  double angle = 0.0;
  float hu = 0.0f;

  bool contains(double row, double col) const;
};

/// Tissue ellipses painted in order over a -1000 HU background, followed by
/// metal implants (each a filled ellipse at >= 3000 HU).
struct Phantom {
  int size = 64;
  std::vector<Ellipse> tissue;
  std::vector<Ellipse> implants;

  HuImage render_tissue() const;
  HuImage render() const;
  /// Only the implant pixels, background 0 (attenuation-free elsewhere).
  Tensor implant_hu_excess() const;
};

struct PhantomOptions {
  int size = 64;
  int n_implants = 2;
  double implant_radius_min = 1.5;
  double implant_radius_max = 3.5;
  float implant_hu_min = 3000.0f;
  float implant_hu_max = 4000.0f;
};

/// Random body cross-section with n_implants well-separated metal inserts.
Phantom random_phantom(std::uint64_t seed, const PhantomOptions& options);

enum class Generator { kFbp, kAnalytic };

struct SimulationOptions {
  ScanGeometry geometry;
  double mu_water = kDefaultMuWater;
  double beta = 0.4;
  double gamma = 0.1;
  Generator generator = Generator::kFbp;
  /// Analytic fallback: peak HU drop of the inter-implant band and its width.
  double streak_amplitude = 400.0;
  double streak_width = 1.5;
};

/// One paired training example, all size x size. x and y in HU, m in {0, 1}.
struct SimulatedSample {
  Tensor x;
  Tensor y;
  Tensor m;
  int n_implants = 0;
  int metal_area = 0;
};

/// Y = FBP of the clean sinogram, X = FBP of the corrupted one, M thresholds
/// the digital metal-inserted phantom. The analytic generator skips the
/// scanner and adds Gaussian line profiles between implant centroids to the
/// digital phantom instead.
SimulatedSample simulate(const Phantom& phantom, const SimulationOptions& options = {});

}  // namespace graphmar::sim
