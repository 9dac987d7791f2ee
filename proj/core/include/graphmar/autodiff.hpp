#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar::ad {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

/// Trainable tensor with its gradient and Adam moment buffers.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;

  void zero_grad() { grad.fill(0.0f); }
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

/// Reverse-mode tape over a closed set of tensor operations.
///
/// Values are recorded in execution order; backward() walks them in reverse
/// and calls each node's backward closure with its accumulated gradient.
/// Parameter gradients are added into Parameter::grad. A tape is used by one
/// thread; build a new tape per forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient (inputs under gradient checks).
  Var leaf(Tensor value);
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient of v after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 for a single-element loss.
  void backward(Var loss);
  /// Seeds an arbitrary upstream gradient.
  void backward(Var output, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Operation plumbing.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  /// Mutable gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* parameter = nullptr;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  // A deque keeps value references stable while operations are appended.
  std::deque<Node> nodes_;
};

// ---- Elementwise -----------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
Var relu(Tape& t, Var a);

// ---- Convolution / normalization (rank-4 N x C x H x W) -------------------

/// Cross-correlation with a k x k kernel (k in {1, 3}), zero padding k/2.
/// bias may be an invalid Var.
Var conv2d(Tape& t, Var input, Var weight, Var bias, int stride = 1);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Per-channel normalization. Train mode uses batch statistics over N*H*W
/// (requires N >= 2) and updates the running statistics; eval mode uses them.
Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormState& state, bool train);

/// Softmax across the channel axis at each spatial location.
Var softmax_channels(Tape& t, Var logits);

/// theta field N x 1 x H x W -> N x C x H x W with channels interleaved as
/// sin(2^j theta), cos(2^j theta) for j = 0..C/2-1. C must be even.
Var sinusoidal_embed(Tape& t, Var theta, int channels);

// ---- Graph -----------------------------------------------------------------

/// Per-sample sparse propagation: out[n, c, i] = sum_j A_n[i, j] h[n, c, j]
/// with nodes enumerating H x W row-major.
Var graph_propagate(Tape& t, std::span<const artifact::SparseAdjacency* const> adjacency, Var h);

/// A H W + b: sparse propagation followed by a channel mixing with
/// weight C_out x C_in x 1 x 1.
Var gcn_layer(Tape& t, std::span<const artifact::SparseAdjacency* const> adjacency, Var h, Var weight, Var bias);

// ---- Mixture / resampling / shape -----------------------------------------

/// sum_k w[:, k] * experts[k], w is N x K x H x W, each expert N x C x H x W.
Var route_and_fuse(Tape& t, Var routing, std::span<const Var> experts);

Var upsample_nearest(Tape& t, Var input, int factor);
/// Bilinear, align_corners=false, per channel.
Var resize_bilinear(Tape& t, Var input, int height, int width);
Var concat_channels(Tape& t, std::span<const Var> inputs);
/// Channel slice [begin, begin + count).
Var slice_channels(Tape& t, Var input, int begin, int count);

/// Per (sample, channel) min-max normalization over the spatial map; constant
/// maps become zeros.
Var minmax_normalize(Tape& t, Var input);

// ---- Reductions (all return shape [1]) ------------------------------------

Var mean_abs_error(Tape& t, Var prediction, Var target);
Var mean_squared_error(Tape& t, Var prediction, Var target);
/// KL(target || prediction) after both are shifted by floor and renormalized
/// to sum to one, averaged over samples. Inputs are N x 1 x H x W.
Var kl_divergence(Tape& t, Var target, Var prediction, float floor = 1e-8f);
/// Sum of elements weighted by a constant tensor of the same shape.
Var weighted_sum(Tape& t, Var input, const Tensor& weights);
/// Select one sample along axis 0 (keeps rank).
Var select_sample(Tape& t, Var input, int index);
/// Sum of [1]-shaped scalars scaled by the given factors.
Var weighted_scalar_sum(Tape& t, std::span<const Var> scalars, std::span<const float> factors);

}  // namespace graphmar::ad
