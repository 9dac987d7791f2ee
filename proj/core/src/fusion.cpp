#include "graphmar/fusion.hpp"

#include <stdexcept>

namespace graphmar {

Tensor clinical_fuse(const Tensor& input, const Tensor& prediction, const Tensor& attention, FusionParams params) {
  if (input.size() != prediction.size() || input.size() != attention.size())
    throw std::invalid_argument("clinical_fuse: input, prediction and attention must have the same size");
  if (!(params.threshold >= 0.0f && params.threshold <= 1.0f)) throw std::invalid_argument("threshold must be in [0,1]");
  if (!(params.tau >= 0.0f && params.tau <= 1.0f)) throw std::invalid_argument("tau must be in [0,1]");
  Tensor out(prediction.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (attention[i] >= params.threshold) {
      out[i] = prediction[i];
    } else {
      out[i] = params.tau * prediction[i] + (1.0f - params.tau) * input[i];
    }
  }
  return out;
}

}  // namespace graphmar
