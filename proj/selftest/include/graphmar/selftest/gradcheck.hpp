#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "graphmar/autodiff.hpp"

namespace graphmar::gradcheck {

/// Builds the op under test from leaf inputs; must be a pure function of them.
using OpFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct Options {
  double step = 1e-2;
  /// At most this many coordinates per input are perturbed (chosen by seed).
  int max_coords = 48;
  std::uint64_t seed = 0;
  /// When > 0, a coordinate is skipped as a non-differentiable point (and
  /// counted in Result::skipped) if its forward and backward one-sided slopes,
  /// or its central differences at step and step/2, differ by more than
  /// kink_tolerance * max(|slope|, kink_floor * rms(gradient)).
  double kink_tolerance = 0.0;
  double kink_floor = 1.0;
};

struct Result {
  double rel_error = 0.0;
  int coords = 0;
  int skipped = 0;
};

/// Central differences of f = sum(out * r), r a fixed random projection,
/// against reverse-mode gradients. Error is ||g_fd - g_ad|| / max(||g_fd||, ||g_ad||)
/// over the perturbed coordinates of all inputs.
Result check(const OpFn& op, std::vector<Tensor> inputs, const Options& options);

/// Same for module parameters: forward builds a fresh tape and returns the output.
using ModuleFn = std::function<ad::Var(ad::Tape&)>;
Result check_parameters(const ModuleFn& forward, std::span<ad::Parameter* const> params, const Options& options);

/// Uniform tensor in [lo, hi); with min_abs > 0 values are pushed away from 0.
Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f, float min_abs = 0.0f);

}  // namespace graphmar::gradcheck
