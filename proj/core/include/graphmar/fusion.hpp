#pragma once

#include "graphmar/tensor.hpp"

namespace graphmar {

struct FusionParams {
  float threshold = 0.5f;
  float tau = 1.0f;
};

/// Y_fuse = M * Y + (1 - M) * (tau * Y + (1 - tau) * X) with M = (attention >= threshold).
/// attention must already be at image resolution.
Tensor clinical_fuse(const Tensor& input, const Tensor& prediction, const Tensor& attention, FusionParams params);

}  // namespace graphmar
