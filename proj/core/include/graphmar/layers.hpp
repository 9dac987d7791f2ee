#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graphmar/autodiff.hpp"

namespace graphmar::nn {

/// Glorot-uniform tensor of the given shape; fans are passed explicitly.
Tensor glorot_uniform(const Shape& shape, int fan_in, int fan_out, std::uint64_t seed);

struct Conv2d {
  Conv2d() = default;
  /// Weight is Glorot-uniform seeded from (seed, name), bias zero. With
  /// zero_init both are zero.
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, std::uint64_t seed,
         bool zero_init = false);

  ad::Var forward(ad::Tape& tape, ad::Var input);
  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter weight;
  ad::Parameter bias;
  int stride = 1;
};

struct BatchNorm2d {
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  ad::Var forward(ad::Tape& tape, ad::Var input, bool train);
  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter gamma;
  ad::Parameter beta;
  ad::BatchNormState state;
  std::string name;
};

struct AdamConfig {
  float lr = 4e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adam with bias correction. step() applies one update to every parameter and
/// zeroes its gradient.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<ad::Parameter* const> params);
  void set_lr(float lr) { config_.lr = lr; }
  float lr() const { return config_.lr; }
  std::int64_t steps() const { return steps_; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
};

}  // namespace graphmar::nn
