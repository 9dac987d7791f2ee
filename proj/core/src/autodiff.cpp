#include "graphmar/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "graphmar/resample.hpp"

namespace graphmar::ad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
}

void require_rank4(const Tensor& a, const char* op) {
  require(a.rank() == 4, std::string(op) + ": expected N x C x H x W, got " + shape_to_string(a.shape()));
}

struct Dims4 {
  int n, c, h, w;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

Dims4 dims4(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tensor scalar(double v) { return Tensor({1}, static_cast<float>(v)); }

}  // namespace

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(Tensor::zeros_like(value)),
      first_moment(Tensor::zeros_like(value)),
      second_moment(Tensor::zeros_like(value)) {}

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
  return nodes_[v.id];
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::parameter(Parameter& p) {
  Var v = record(p.value, true, nullptr);
  nodes_[v.id].parameter = &p;
  return v;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() && !n.value.empty() ? Tensor::zeros_like(n.value) : n.grad;
}

bool Tape::requires_grad(Var v) const { return v.valid() && node(v).requires_grad; }

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return requires_grad(v); });
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(value(loss).size() == 1, "backward(loss) requires a single-element loss");
  backward(loss, Tensor(value(loss).shape(), 1.0f));
}

void Tape::backward(Var output, const Tensor& seed) {
  require_same_shape(value(output), seed, "backward seed");
  add_into(grad_buffer(output), seed);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, nodes_[i].grad);
    if (n.parameter) add_into(n.parameter->grad, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "add");
  Tensor out = x;
  add_into(out, y);
  return t.record(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) add_into(tp.grad_buffer(a), g);
    if (tp.requires_grad(b)) add_into(tp.grad_buffer(b), g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return t.record(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) add_into(tp.grad_buffer(a), g);
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return t.record(std::move(out), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    const Tensor& xa = tp.value(a);
    const Tensor& xb = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    }
  });
}

Var scale(Tape& t, Var a, float s) {
  Tensor out = t.value(a);
  for (float& v : out.data()) v *= s;
  return t.record(std::move(out), t.requires_grad(a), [a, s](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0f) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  int cin, h, w, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
};

void im2col(const float* x, const ConvGeometry& g, float* col) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          float* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* x) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          float* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const float* src = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& t, Var input, Var weight, Var bias, int stride) {
  const Tensor& x = t.value(input);
  const Tensor& wt = t.value(weight);
  require_rank4(x, "conv2d input");
  require(wt.rank() == 4, "conv2d: weight must be C_out x C_in x k x k");
  const Dims4 d = dims4(x);
  const int cout = wt.dim(0);
  const int k = wt.dim(2);
  require(wt.dim(1) == d.c, "conv2d: weight expects " + std::to_string(wt.dim(1)) + " input channels, got " +
                                std::to_string(d.c));
  require(k == wt.dim(3) && (k == 1 || k == 3), "conv2d: kernel must be 1x1 or 3x3");
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  if (bias.valid()) require(t.value(bias).size() == static_cast<std::size_t>(cout), "conv2d: bias size mismatch");

  const int pad = k / 2;
  ConvGeometry g{d.c, d.h, d.w, k, stride, pad, (d.h + 2 * pad - k) / stride + 1, (d.w + 2 * pad - k) / stride + 1};
  const bool direct = (k == 1 && stride == 1);

  Tensor out({d.n, cout, g.ho, g.wo});
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMatMap wmat(wt.data().data(), cout, g.rows());
  for (int n = 0; n < d.n; ++n) {
    const float* xn = x.data().data() + static_cast<std::size_t>(n) * d.c * d.plane();
    const float* src = xn;
    if (!direct) {
      im2col(xn, g, col.data());
      src = col.data();
    }
    MatMap omat(out.data().data() + static_cast<std::size_t>(n) * cout * g.cols(), cout, g.cols());
    omat.noalias() = wmat * ConstMatMap(src, g.rows(), g.cols());
    if (bias.valid()) {
      const Tensor& b = t.value(bias);
      for (int co = 0; co < cout; ++co) omat.row(co).array() += b[co];
    }
  }

  const bool rg = t.any_requires_grad({input, weight, bias});
  return t.record(std::move(out), rg, [input, weight, bias, g, direct](Tape& tp, const Tensor& grad) {
    const Tensor& xv = tp.value(input);
    const Tensor& wv = tp.value(weight);
    const int n_batch = xv.dim(0);
    const int cout_ = wv.dim(0);
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(cout_) * g.cols();
    ConstMatMap wm(wv.data().data(), cout_, g.rows());
    std::vector<float> colbuf(direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
    std::vector<float> dcol(static_cast<std::size_t>(g.rows()) * g.cols());
    const bool need_w = tp.requires_grad(weight);
    const bool need_x = tp.requires_grad(input);
    for (int n = 0; n < n_batch; ++n) {
      ConstMatMap gm(grad.data().data() + n * out_stride, cout_, g.cols());
      if (need_w) {
        const float* src = xv.data().data() + n * in_stride;
        if (!direct) {
          im2col(src, g, colbuf.data());
          src = colbuf.data();
        }
        MatMap gw(tp.grad_buffer(weight).data().data(), cout_, g.rows());
        gw.noalias() += gm * ConstMatMap(src, g.rows(), g.cols()).transpose();
      }
      if (need_x) {
        float* gx = tp.grad_buffer(input).data().data() + n * in_stride;
        if (direct) {
          MatMap(gx, g.rows(), g.cols()).noalias() += wm.transpose() * gm;
        } else {
          MatMap(dcol.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gm;
          col2im_add(dcol.data(), g, gx);
        }
      }
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      Tensor& gb = tp.grad_buffer(bias);
      for (int n = 0; n < n_batch; ++n)
        for (int co = 0; co < cout_; ++co) {
          const float* row = grad.data().data() + n * out_stride + static_cast<std::size_t>(co) * g.cols();
          double acc = 0.0;
          for (int i = 0; i < g.cols(); ++i) acc += row[i];
          gb[co] += static_cast<float>(acc);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormState& state, bool train) {
  const Tensor& x = t.value(input);
  require_rank4(x, "batch_norm");
  const Dims4 d = dims4(x);
  require(t.value(gamma).size() == static_cast<std::size_t>(d.c) && t.value(beta).size() == static_cast<std::size_t>(d.c),
          "batch_norm: affine parameter size mismatch");
  if (state.running_mean.empty()) {
    state.running_mean = Tensor({d.c}, 0.0f);
    state.running_var = Tensor({d.c}, 1.0f);
  }
  require(train ? d.n >= 2 : true, "batch_norm: train mode needs a batch of at least 2");

  const std::size_t plane = d.plane();
  const double count = static_cast<double>(d.n) * plane;
  std::vector<float> mean(d.c), invstd(d.c);
  for (int c = 0; c < d.c; ++c) {
    if (train) {
      double s = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const float* p = x.data().data() + (static_cast<std::size_t>(n) * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / count;
      double v = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const float* p = x.data().data() + (static_cast<std::size_t>(n) * d.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / count;
      mean[c] = static_cast<float>(mu);
      invstd[c] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = count > 1 ? v / (count - 1) : var;
      state.running_mean[c] = static_cast<float>((1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu);
      state.running_var[c] =
          static_cast<float>((1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      mean[c] = state.running_mean[c];
      invstd[c] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    }
  }

  const Tensor& gm = t.value(gamma);
  const Tensor& bt = t.value(beta);
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * d.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (x[off + i] - mean[c]) * invstd[c];
        xhat[off + i] = xh;
        out[off + i] = gm[c] * xh + bt[c];
      }
    }

  const bool rg = t.any_requires_grad({input, gamma, beta});
  return t.record(std::move(out), rg,
                  [input, gamma, beta, xhat = std::move(xhat), invstd, train, d](Tape& tp, const Tensor& g) {
                    const std::size_t pl = d.plane();
                    const double m = static_cast<double>(d.n) * pl;
                    const Tensor& gmv = tp.value(gamma);
                    for (int c = 0; c < d.c; ++c) {
                      double sum_g = 0.0, sum_gx = 0.0;
                      for (int n = 0; n < d.n; ++n) {
                        const std::size_t off = (static_cast<std::size_t>(n) * d.c + c) * pl;
                        for (std::size_t i = 0; i < pl; ++i) {
                          sum_g += g[off + i];
                          sum_gx += static_cast<double>(g[off + i]) * xhat[off + i];
                        }
                      }
                      if (tp.requires_grad(gamma)) tp.grad_buffer(gamma)[c] += static_cast<float>(sum_gx);
                      if (tp.requires_grad(beta)) tp.grad_buffer(beta)[c] += static_cast<float>(sum_g);
                      if (!tp.requires_grad(input)) continue;
                      Tensor& gx = tp.grad_buffer(input);
                      const double scale_c = static_cast<double>(gmv[c]) * invstd[c];
                      for (int n = 0; n < d.n; ++n) {
                        const std::size_t off = (static_cast<std::size_t>(n) * d.c + c) * pl;
                        for (std::size_t i = 0; i < pl; ++i) {
                          if (train)
                            gx[off + i] += static_cast<float>(scale_c * (g[off + i] - sum_g / m - xhat[off + i] * sum_gx / m));
                          else
                            gx[off + i] += static_cast<float>(scale_c * g[off + i]);
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Softmax / embeddings

Var softmax_channels(Tape& t, Var logits) {
  const Tensor& x = t.value(logits);
  require_rank4(x, "softmax_channels");
  const Dims4 d = dims4(x);
  const std::size_t plane = d.plane();
  Tensor out(x.shape());
  std::vector<double> e(static_cast<std::size_t>(d.c));
  for (int n = 0; n < d.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * d.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < d.c; ++c) mx = std::max(mx, static_cast<double>(x[base + c * plane + p]));
      double s = 0.0;
      for (int c = 0; c < d.c; ++c) s += (e[c] = std::exp(x[base + c * plane + p] - mx));
      for (int c = 0; c < d.c; ++c) out[base + c * plane + p] = static_cast<float>(e[c] / s);
    }
  }
  return t.record(std::move(out), t.requires_grad(logits), [logits, d](Tape& tp, const Tensor& g) {
    // Softmax output is recomputed from the logits rather than stored.
    const Tensor& xv = tp.value(logits);
    Tensor& gx = tp.grad_buffer(logits);
    const std::size_t pl = d.plane();
    std::vector<double> y(static_cast<std::size_t>(d.c));
    for (int n = 0; n < d.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * d.c * pl;
      for (std::size_t p = 0; p < pl; ++p) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < d.c; ++c) mx = std::max(mx, static_cast<double>(xv[base + c * pl + p]));
        double s = 0.0;
        for (int c = 0; c < d.c; ++c) s += (y[c] = std::exp(xv[base + c * pl + p] - mx));
        double dot = 0.0;
        for (int c = 0; c < d.c; ++c) {
          y[c] /= s;
          dot += y[c] * g[base + c * pl + p];
        }
        for (int c = 0; c < d.c; ++c) gx[base + c * pl + p] += static_cast<float>(y[c] * (g[base + c * pl + p] - dot));
      }
    }
  });
}

Var sinusoidal_embed(Tape& t, Var theta, int channels) {
  const Tensor& th = t.value(theta);
  require_rank4(th, "sinusoidal_embed");
  require(th.dim(1) == 1, "sinusoidal_embed: theta must have one channel");
  require(channels >= 2 && channels % 2 == 0, "sinusoidal_embed: channel count must be even and >= 2");
  const Dims4 d = dims4(th);
  const std::size_t plane = d.plane();
  Tensor out({d.n, channels, d.h, d.w});
  for (int n = 0; n < d.n; ++n)
    for (int j = 0; j < channels / 2; ++j) {
      const double freq = std::ldexp(1.0, j);
      float* s = out.data().data() + (static_cast<std::size_t>(n) * channels + 2 * j) * plane;
      float* c = s + plane;
      const float* src = th.data().data() + static_cast<std::size_t>(n) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double a = freq * src[p];
        s[p] = static_cast<float>(std::sin(a));
        c[p] = static_cast<float>(std::cos(a));
      }
    }
  return t.record(std::move(out), t.requires_grad(theta), [theta, channels, d](Tape& tp, const Tensor& g) {
    const Tensor& thv = tp.value(theta);
    Tensor& gt = tp.grad_buffer(theta);
    const std::size_t pl = d.plane();
    for (int n = 0; n < d.n; ++n)
      for (int j = 0; j < channels / 2; ++j) {
        const double freq = std::ldexp(1.0, j);
        const float* gs = g.data().data() + (static_cast<std::size_t>(n) * channels + 2 * j) * pl;
        const float* gc = gs + pl;
        for (std::size_t p = 0; p < pl; ++p) {
          const double a = freq * thv[n * pl + p];
          gt[n * pl + p] += static_cast<float>(freq * (gs[p] * std::cos(a) - gc[p] * std::sin(a)));
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Graph

Var graph_propagate(Tape& t, std::span<const artifact::SparseAdjacency* const> adjacency, Var h) {
  const Tensor& x = t.value(h);
  require_rank4(x, "graph_propagate");
  const Dims4 d = dims4(x);
  require(adjacency.size() == static_cast<std::size_t>(d.n), "graph_propagate: one adjacency per sample required");
  for (const auto* a : adjacency) {
    require(a != nullptr, "graph_propagate: null adjacency");
    if (!a->finalized()) throw std::logic_error("graph_propagate: adjacency is not finalized");
    require(a->node_count() == static_cast<int>(d.plane()), "graph_propagate: node count does not match H x W");
  }
  Tensor out(x.shape());
  const std::size_t stride = static_cast<std::size_t>(d.c) * d.plane();
  for (int n = 0; n < d.n; ++n)
    adjacency[n]->propagate(x.data().subspan(n * stride, stride), d.c, out.data().subspan(n * stride, stride));
  std::vector<const artifact::SparseAdjacency*> adj(adjacency.begin(), adjacency.end());
  return t.record(std::move(out), t.requires_grad(h), [h, adj = std::move(adj), d](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(h);
    const std::size_t st = static_cast<std::size_t>(d.c) * d.plane();
    for (int n = 0; n < d.n; ++n)
      adj[n]->propagate_transpose_add(g.data().subspan(n * st, st), d.c, gx.data().subspan(n * st, st));
  });
}

Var gcn_layer(Tape& t, std::span<const artifact::SparseAdjacency* const> adjacency, Var h, Var weight, Var bias) {
  return conv2d(t, graph_propagate(t, adjacency, h), weight, bias, 1);
}

// ---------------------------------------------------------------------------
// Mixture / resampling / shape

Var route_and_fuse(Tape& t, Var routing, std::span<const Var> experts) {
  const Tensor& w = t.value(routing);
  require_rank4(w, "route_and_fuse routing");
  const Dims4 dw = dims4(w);
  require(static_cast<std::size_t>(dw.c) == experts.size(),
          "route_and_fuse: routing has " + std::to_string(dw.c) + " channels but " + std::to_string(experts.size()) +
              " experts were given");
  require(!experts.empty(), "route_and_fuse: no experts");
  const Tensor& first = t.value(experts[0]);
  require_rank4(first, "route_and_fuse expert");
  const Dims4 de = dims4(first);
  require(de.n == dw.n && de.h == dw.h && de.w == dw.w, "route_and_fuse: spatial shape mismatch");
  for (Var e : experts) require_same_shape(t.value(e), first, "route_and_fuse experts");

  const std::size_t plane = de.plane();
  Tensor out(first.shape());
  for (std::size_t k = 0; k < experts.size(); ++k) {
    const Tensor& u = t.value(experts[k]);
    for (int n = 0; n < de.n; ++n) {
      const float* wk = w.data().data() + (static_cast<std::size_t>(n) * dw.c + k) * plane;
      for (int c = 0; c < de.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * de.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) out[off + p] += wk[p] * u[off + p];
      }
    }
  }
  bool rg = t.requires_grad(routing);
  for (Var e : experts) rg = rg || t.requires_grad(e);
  std::vector<Var> ex(experts.begin(), experts.end());
  return t.record(std::move(out), rg, [routing, ex = std::move(ex), dw, de](Tape& tp, const Tensor& g) {
    const Tensor& wv = tp.value(routing);
    const std::size_t pl = de.plane();
    for (std::size_t k = 0; k < ex.size(); ++k) {
      const Tensor& u = tp.value(ex[k]);
      const bool need_u = tp.requires_grad(ex[k]);
      const bool need_w = tp.requires_grad(routing);
      for (int n = 0; n < de.n; ++n) {
        const std::size_t woff = (static_cast<std::size_t>(n) * dw.c + k) * pl;
        for (int c = 0; c < de.c; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * de.c + c) * pl;
          if (need_u) {
            Tensor& gu = tp.grad_buffer(ex[k]);
            for (std::size_t p = 0; p < pl; ++p) gu[off + p] += wv[woff + p] * g[off + p];
          }
          if (need_w) {
            Tensor& gw = tp.grad_buffer(routing);
            for (std::size_t p = 0; p < pl; ++p) gw[woff + p] += g[off + p] * u[off + p];
          }
        }
      }
    }
  });
}

Var upsample_nearest(Tape& t, Var input, int factor) {
  const Tensor& x = t.value(input);
  require_rank4(x, "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const Dims4 d = dims4(x);
  const int ho = d.h * factor;
  const int wo = d.w * factor;
  Tensor out({d.n, d.c, ho, wo});
  for (int nc = 0; nc < d.n * d.c; ++nc) {
    const float* src = x.data().data() + static_cast<std::size_t>(nc) * d.plane();
    float* dst = out.data().data() + static_cast<std::size_t>(nc) * ho * wo;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) dst[i * wo + j] = src[(i / factor) * d.w + j / factor];
  }
  return t.record(std::move(out), t.requires_grad(input), [input, factor, d](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(input);
    const int ho_ = d.h * factor, wo_ = d.w * factor;
    for (int nc = 0; nc < d.n * d.c; ++nc) {
      float* dst = gx.data().data() + static_cast<std::size_t>(nc) * d.plane();
      const float* src = g.data().data() + static_cast<std::size_t>(nc) * ho_ * wo_;
      for (int i = 0; i < ho_; ++i)
        for (int j = 0; j < wo_; ++j) dst[(i / factor) * d.w + j / factor] += src[i * wo_ + j];
    }
  });
}

Var resize_bilinear(Tape& t, Var input, int height, int width) {
  const Tensor& x = t.value(input);
  require_rank4(x, "resize_bilinear");
  require(height >= 1 && width >= 1, "resize_bilinear: target dimensions must be >= 1");
  const Dims4 d = dims4(x);
  auto ty = linear_taps(d.h, height);
  auto tx = linear_taps(d.w, width);
  Tensor out({d.n, d.c, height, width});
  for (int nc = 0; nc < d.n * d.c; ++nc) {
    const float* src = x.data().data() + static_cast<std::size_t>(nc) * d.plane();
    float* dst = out.data().data() + static_cast<std::size_t>(nc) * height * width;
    for (int i = 0; i < height; ++i) {
      const double wy = ty[i].weight;
      for (int j = 0; j < width; ++j) {
        const double wx = tx[j].weight;
        const double top = (1 - wx) * src[ty[i].lo * d.w + tx[j].lo] + wx * src[ty[i].lo * d.w + tx[j].hi];
        const double bot = (1 - wx) * src[ty[i].hi * d.w + tx[j].lo] + wx * src[ty[i].hi * d.w + tx[j].hi];
        dst[i * width + j] = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return t.record(std::move(out), t.requires_grad(input),
                  [input, d, height, width, ty = std::move(ty), tx = std::move(tx)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_buffer(input);
                    for (int nc = 0; nc < d.n * d.c; ++nc) {
                      float* dst = gx.data().data() + static_cast<std::size_t>(nc) * d.plane();
                      const float* src = g.data().data() + static_cast<std::size_t>(nc) * height * width;
                      for (int i = 0; i < height; ++i) {
                        const float wy = ty[i].weight;
                        for (int j = 0; j < width; ++j) {
                          const float wx = tx[j].weight;
                          const float v = src[i * width + j];
                          dst[ty[i].lo * d.w + tx[j].lo] += (1 - wy) * (1 - wx) * v;
                          dst[ty[i].lo * d.w + tx[j].hi] += (1 - wy) * wx * v;
                          dst[ty[i].hi * d.w + tx[j].lo] += wy * (1 - wx) * v;
                          dst[ty[i].hi * d.w + tx[j].hi] += wy * wx * v;
                        }
                      }
                    }
                  });
}

Var concat_channels(Tape& t, std::span<const Var> inputs) {
  require(!inputs.empty(), "concat_channels: no inputs");
  const Tensor& first = t.value(inputs[0]);
  require_rank4(first, "concat_channels");
  const Dims4 d0 = dims4(first);
  int total = 0;
  std::vector<int> offsets;
  bool rg = false;
  for (Var v : inputs) {
    const Tensor& x = t.value(v);
    require_rank4(x, "concat_channels");
    require(x.dim(0) == d0.n && x.dim(2) == d0.h && x.dim(3) == d0.w, "concat_channels: shape mismatch");
    offsets.push_back(total);
    total += x.dim(1);
    rg = rg || t.requires_grad(v);
  }
  const std::size_t plane = d0.plane();
  Tensor out({d0.n, total, d0.h, d0.w});
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& x = t.value(inputs[k]);
    const int c = x.dim(1);
    for (int n = 0; n < d0.n; ++n)
      std::copy_n(x.data().data() + static_cast<std::size_t>(n) * c * plane, c * plane,
                  out.data().data() + (static_cast<std::size_t>(n) * total + offsets[k]) * plane);
  }
  std::vector<Var> in(inputs.begin(), inputs.end());
  return t.record(std::move(out), rg, [in = std::move(in), offsets, total, d0](Tape& tp, const Tensor& g) {
    const std::size_t pl = d0.plane();
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (!tp.requires_grad(in[k])) continue;
      Tensor& gx = tp.grad_buffer(in[k]);
      const int c = gx.dim(1);
      for (int n = 0; n < d0.n; ++n) {
        const float* src = g.data().data() + (static_cast<std::size_t>(n) * total + offsets[k]) * pl;
        float* dst = gx.data().data() + static_cast<std::size_t>(n) * c * pl;
        for (std::size_t i = 0; i < c * pl; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(Tape& t, Var input, int begin, int count) {
  const Tensor& x = t.value(input);
  require_rank4(x, "slice_channels");
  const Dims4 d = dims4(x);
  require(begin >= 0 && count >= 1 && begin + count <= d.c, "slice_channels: range out of bounds");
  const std::size_t plane = d.plane();
  Tensor out({d.n, count, d.h, d.w});
  for (int n = 0; n < d.n; ++n)
    std::copy_n(x.data().data() + (static_cast<std::size_t>(n) * d.c + begin) * plane, count * plane,
                out.data().data() + static_cast<std::size_t>(n) * count * plane);
  return t.record(std::move(out), t.requires_grad(input), [input, begin, count, d](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(input);
    const std::size_t pl = d.plane();
    for (int n = 0; n < d.n; ++n) {
      float* dst = gx.data().data() + (static_cast<std::size_t>(n) * d.c + begin) * pl;
      const float* src = g.data().data() + static_cast<std::size_t>(n) * count * pl;
      for (std::size_t i = 0; i < count * pl; ++i) dst[i] += src[i];
    }
  });
}

Var minmax_normalize(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  require_rank4(x, "minmax_normalize");
  const Dims4 d = dims4(x);
  const std::size_t plane = d.plane();
  Tensor out(x.shape());
  struct Extent {
    std::size_t lo, hi;
    double range;
  };
  std::vector<Extent> ext(static_cast<std::size_t>(d.n) * d.c);
  for (std::size_t m = 0; m < ext.size(); ++m) {
    const float* src = x.data().data() + m * plane;
    const auto [lo, hi] = std::minmax_element(src, src + plane);
    ext[m] = {static_cast<std::size_t>(lo - src), static_cast<std::size_t>(hi - src),
              static_cast<double>(*hi) - static_cast<double>(*lo)};
    float* dst = out.data().data() + m * plane;
    if (ext[m].range > 0.0)
      for (std::size_t p = 0; p < plane; ++p) dst[p] = static_cast<float>((src[p] - static_cast<double>(*lo)) / ext[m].range);
  }
  Tensor y = out;
  return t.record(std::move(out), t.requires_grad(input),
                  [input, ext = std::move(ext), y = std::move(y), plane](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_buffer(input);
                    for (std::size_t m = 0; m < ext.size(); ++m) {
                      if (!(ext[m].range > 0.0)) continue;
                      const float* gm = g.data().data() + m * plane;
                      const float* ym = y.data().data() + m * plane;
                      float* dst = gx.data().data() + m * plane;
                      const double inv = 1.0 / ext[m].range;
                      double to_lo = 0.0, to_hi = 0.0;
                      for (std::size_t p = 0; p < plane; ++p) {
                        dst[p] += static_cast<float>(gm[p] * inv);
                        to_lo += gm[p] * (ym[p] - 1.0) * inv;
                        to_hi -= gm[p] * ym[p] * inv;
                      }
                      dst[ext[m].lo] += static_cast<float>(to_lo);
                      dst[ext[m].hi] += static_cast<float>(to_hi);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Reductions

Var mean_abs_error(Tape& t, Var prediction, Var target) {
  const Tensor& p = t.value(prediction);
  const Tensor& y = t.value(target);
  require_same_shape(p, y, "mean_abs_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(static_cast<double>(p[i]) - y[i]);
  const double n = static_cast<double>(p.size());
  return t.record(scalar(acc / n), t.any_requires_grad({prediction, target}),
                  [prediction, target, n](Tape& tp, const Tensor& g) {
                    const Tensor& pv = tp.value(prediction);
                    const Tensor& yv = tp.value(target);
                    const float s = static_cast<float>(g[0] / n);
                    auto sign = [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); };
                    if (tp.requires_grad(prediction)) {
                      Tensor& gp = tp.grad_buffer(prediction);
                      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += s * sign(pv[i] - yv[i]);
                    }
                    if (tp.requires_grad(target)) {
                      Tensor& gy = tp.grad_buffer(target);
                      for (std::size_t i = 0; i < pv.size(); ++i) gy[i] -= s * sign(pv[i] - yv[i]);
                    }
                  });
}

Var mean_squared_error(Tape& t, Var prediction, Var target) {
  const Tensor& p = t.value(prediction);
  const Tensor& y = t.value(target);
  require_same_shape(p, y, "mean_squared_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = static_cast<double>(p[i]) - y[i];
    acc += e * e;
  }
  const double n = static_cast<double>(p.size());
  return t.record(scalar(acc / n), t.any_requires_grad({prediction, target}),
                  [prediction, target, n](Tape& tp, const Tensor& g) {
                    const Tensor& pv = tp.value(prediction);
                    const Tensor& yv = tp.value(target);
                    const double s = 2.0 * g[0] / n;
                    if (tp.requires_grad(prediction)) {
                      Tensor& gp = tp.grad_buffer(prediction);
                      for (std::size_t i = 0; i < pv.size(); ++i)
                        gp[i] += static_cast<float>(s * (static_cast<double>(pv[i]) - yv[i]));
                    }
                    if (tp.requires_grad(target)) {
                      Tensor& gy = tp.grad_buffer(target);
                      for (std::size_t i = 0; i < pv.size(); ++i)
                        gy[i] -= static_cast<float>(s * (static_cast<double>(pv[i]) - yv[i]));
                    }
                  });
}

Var kl_divergence(Tape& t, Var target, Var prediction, float floor) {
  const Tensor& b = t.value(target);
  const Tensor& a = t.value(prediction);
  require_same_shape(a, b, "kl_divergence");
  require_rank4(a, "kl_divergence");
  const int n = a.dim(0);
  const std::size_t m = a.size() / static_cast<std::size_t>(n);
  double total = 0.0;
  std::vector<double> per_sample(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sa += a[s * m + i] + static_cast<double>(floor);
      sb += b[s * m + i] + static_cast<double>(floor);
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double p = (b[s * m + i] + static_cast<double>(floor)) / sb;
      const double q = (a[s * m + i] + static_cast<double>(floor)) / sa;
      kl += p * std::log(p / q);
    }
    per_sample[s] = kl;
    total += kl;
  }
  return t.record(scalar(total / n), t.any_requires_grad({target, prediction}),
                  [target, prediction, floor, n, m, per_sample](Tape& tp, const Tensor& g) {
                    const Tensor& bv = tp.value(target);
                    const Tensor& av = tp.value(prediction);
                    const double up = g[0] / n;
                    for (int s = 0; s < n; ++s) {
                      double sa = 0.0, sb = 0.0;
                      for (std::size_t i = 0; i < m; ++i) {
                        sa += av[s * m + i] + static_cast<double>(floor);
                        sb += bv[s * m + i] + static_cast<double>(floor);
                      }
                      for (std::size_t i = 0; i < m; ++i) {
                        const double ai = av[s * m + i] + static_cast<double>(floor);
                        const double bi = bv[s * m + i] + static_cast<double>(floor);
                        const double p = bi / sb;
                        if (tp.requires_grad(prediction))
                          tp.grad_buffer(prediction)[s * m + i] += static_cast<float>(up * (-p / ai + 1.0 / sa));
                        if (tp.requires_grad(target))
                          tp.grad_buffer(target)[s * m + i] +=
                              static_cast<float>(up * (std::log(p / (ai / sa)) - per_sample[s]) / sb);
                      }
                    }
                  });
}

Var weighted_sum(Tape& t, Var input, const Tensor& weights) {
  const Tensor& x = t.value(input);
  require_same_shape(x, weights, "weighted_sum");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * weights[i];
  return t.record(scalar(acc), t.requires_grad(input), [input, weights](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * weights[i];
  });
}

Var select_sample(Tape& t, Var input, int index) {
  const Tensor& x = t.value(input);
  require(x.rank() >= 2, "select_sample: rank must be >= 2");
  require(index >= 0 && index < x.dim(0), "select_sample: index out of range");
  Shape shape = x.shape();
  shape[0] = 1;
  const std::size_t m = shape_numel(shape);
  std::vector<float> data(x.data().begin() + index * m, x.data().begin() + (index + 1) * m);
  return t.record(Tensor(shape, std::move(data)), t.requires_grad(input), [input, index, m](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(input);
    for (std::size_t i = 0; i < m; ++i) gx[index * m + i] += g[i];
  });
}

Var weighted_scalar_sum(Tape& t, std::span<const Var> scalars, std::span<const float> factors) {
  require(scalars.size() == factors.size(), "weighted_scalar_sum: size mismatch");
  double acc = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(t.value(scalars[i]).size() == 1, "weighted_scalar_sum: inputs must be scalars");
    acc += static_cast<double>(factors[i]) * t.value(scalars[i])[0];
    rg = rg || t.requires_grad(scalars[i]);
  }
  std::vector<Var> s(scalars.begin(), scalars.end());
  std::vector<float> f(factors.begin(), factors.end());
  return t.record(scalar(acc), rg, [s = std::move(s), f = std::move(f)](Tape& tp, const Tensor& g) {
    for (std::size_t i = 0; i < s.size(); ++i)
      if (tp.requires_grad(s[i])) tp.grad_buffer(s[i])[0] += f[i] * g[0];
  });
}

}  // namespace graphmar::ad
