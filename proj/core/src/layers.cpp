#include "graphmar/layers.hpp"

#include <cmath>

#include "graphmar/rng.hpp"

namespace graphmar::nn {

Tensor glorot_uniform(const Shape& shape, int fan_in, int fan_out, std::uint64_t seed) {
  Tensor t(shape);
  SplitMix64 rng(seed);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
  return t;
}

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride_,
               std::uint64_t seed, bool zero_init)
    : stride(stride_) {
  const Shape shape{out_channels, in_channels, kernel, kernel};
  const int area = kernel * kernel;
  weight = ad::Parameter(name + ".weight", zero_init ? Tensor(shape)
                                                     : glorot_uniform(shape, in_channels * area, out_channels * area,
                                                                      derive_seed(seed, name + ".weight")));
  bias = ad::Parameter(name + ".bias", Tensor({out_channels}));
}

ad::Var Conv2d::forward(ad::Tape& tape, ad::Var input) {
  return ad::conv2d(tape, input, tape.parameter(weight), tape.parameter(bias), stride);
}

void Conv2d::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

BatchNorm2d::BatchNorm2d(const std::string& name_, int channels)
    : gamma(name_ + ".gamma", Tensor({channels}, 1.0f)), beta(name_ + ".beta", Tensor({channels})), name(name_) {
  state.running_mean = Tensor({channels}, 0.0f);
  state.running_var = Tensor({channels}, 1.0f);
}

ad::Var BatchNorm2d::forward(ad::Tape& tape, ad::Var input, bool train) {
  return ad::batch_norm(tape, input, tape.parameter(gamma), tape.parameter(beta), state, train);
}

void BatchNorm2d::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void Adam::step(std::span<ad::Parameter* const> params) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(steps_));
  for (ad::Parameter* p : params) {
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto m = p->first_moment.data();
    auto v = p->second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= static_cast<float>(config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
      grad[i] = 0.0f;
    }
  }
}

}  // namespace graphmar::nn
