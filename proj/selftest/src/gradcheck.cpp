#include "graphmar/selftest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "graphmar/rng.hpp"

namespace graphmar::gradcheck {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo, float hi, float min_abs) {
  Tensor t(shape);
  SplitMix64 rng(seed);
  for (float& v : t.data()) {
    double x = rng.uniform(lo, hi);
    if (min_abs > 0.0f && std::fabs(x) < min_abs) x = x < 0 ? x - min_abs : x + min_abs;
    v = static_cast<float>(x);
  }
  return t;
}

namespace {

double project(const Tensor& out, const Tensor& r) {
  double f = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) f += static_cast<double>(out[i]) * r[i];
  return f;
}

std::vector<std::size_t> pick_coords(std::size_t n, int max_coords, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (static_cast<int>(n) <= max_coords) return idx;
  for (int i = 0; i < max_coords; ++i)
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(i, static_cast<int>(n) - 1))]);
  idx.resize(static_cast<std::size_t>(max_coords));
  return idx;
}

// Accumulates one perturbed coordinate into the running error sums.
struct Accumulator {
  double diff2 = 0.0, fd2 = 0.0, ad2 = 0.0;
  int coords = 0;
  int skipped = 0;
  /// Root mean square of the analytic gradient, the scale for kink_floor.
  double grad_rms = 0.0;
  /// Expected float32 rounding noise of one evaluation of f.
  double f_noise = 0.0;

  template <typename Eval>
  void probe(float& slot, double analytic, const Options& options, Eval&& eval) {
    const float saved = slot;
    const float hi = static_cast<float>(saved + options.step);
    const float lo = static_cast<float>(saved - options.step);
    slot = hi;
    const double fp = eval();
    slot = lo;
    const double fm = eval();
    slot = saved;
    // Divide by the perturbation actually representable in float.
    const double fd = (fp - fm) / (static_cast<double>(hi) - lo);
    if (options.kink_tolerance > 0.0) {
      // A relu crossing inside [lo, hi] makes the one-sided slopes disagree,
      // or, with a crossing on each side, the central differences at h and
      // h/2. A wrong analytic gradient passes both tests and is still counted.
      const double f0 = eval();
      const float half_hi = static_cast<float>(saved + options.step / 2);
      const float half_lo = static_cast<float>(saved - options.step / 2);
      slot = half_hi;
      const double fp2 = eval();
      slot = half_lo;
      const double fm2 = eval();
      slot = saved;
      const double forward = (fp - f0) / (static_cast<double>(hi) - saved);
      const double backward = (f0 - fm) / (static_cast<double>(saved) - lo);
      const double fd_half = (fp2 - fm2) / (static_cast<double>(half_hi) - half_lo);
      const double scale = std::max({std::fabs(forward), std::fabs(backward), options.kink_floor * grad_rms});
      const double rounding = f_noise / (static_cast<double>(half_hi) - half_lo);
      if (std::max(std::fabs(forward - backward), std::fabs(fd - fd_half)) > options.kink_tolerance * scale + rounding) {
        ++skipped;
        return;
      }
    }
    diff2 += (fd - analytic) * (fd - analytic);
    fd2 += fd * fd;
    ad2 += analytic * analytic;
    ++coords;
  }

  Result finish() const {
    Result r;
    r.coords = coords;
    r.skipped = skipped;
    const double denom = std::max({std::sqrt(fd2), std::sqrt(ad2), 1e-12});
    r.rel_error = std::sqrt(diff2) / denom;
    return r;
  }
};

// Rounding of each output element is roughly independent, so the error of
// sum(out * r) grows with the 2-norm of the terms.
double projection_noise(const Tensor& out, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double term = static_cast<double>(out[i]) * r[i];
    acc += term * term;
  }
  return std::sqrt(acc) * std::numeric_limits<float>::epsilon();
}

double rms(std::span<const Tensor> grads) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const Tensor& g : grads) {
    for (float v : g.data()) acc += static_cast<double>(v) * v;
    n += g.size();
  }
  return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

}  // namespace

Result check(const OpFn& op, std::vector<Tensor> inputs, const Options& options) {
  SplitMix64 rng(options.seed ^ 0x6a09e667f3bcc909ull);
  Tensor r;
  double noise = 0.0;
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    const ad::Var out = op(tape, vars);
    r = random_tensor(tape.value(out).shape(), rng.next());
    noise = projection_noise(tape.value(out), r);
    tape.backward(out, r);
    for (ad::Var v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    return project(tape.value(op(tape, vars)), r);
  };

  Accumulator acc;
  acc.grad_rms = rms(analytic);
  acc.f_noise = noise;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i : pick_coords(inputs[k].size(), options.max_coords, rng))
      acc.probe(inputs[k][i], analytic[k][i], options, eval);
  return acc.finish();
}

Result check_parameters(const ModuleFn& forward, std::span<ad::Parameter* const> params, const Options& options) {
  SplitMix64 rng(options.seed ^ 0xbb67ae8584caa73bull);
  for (ad::Parameter* p : params) p->zero_grad();
  Tensor r;
  double noise = 0.0;
  {
    ad::Tape tape;
    const ad::Var out = forward(tape);
    r = random_tensor(tape.value(out).shape(), rng.next());
    noise = projection_noise(tape.value(out), r);
    tape.backward(out, r);
  }
  std::vector<Tensor> analytic;
  for (ad::Parameter* p : params) analytic.push_back(p->grad);
  auto eval = [&]() {
    ad::Tape tape;
    return project(tape.value(forward(tape)), r);
  };

  Accumulator acc;
  acc.grad_rms = rms(analytic);
  acc.f_noise = noise;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i : pick_coords(params[k]->value.size(), options.max_coords, rng))
      acc.probe(params[k]->value[i], analytic[k][i], options, eval);
  for (ad::Parameter* p : params) p->zero_grad();
  return acc.finish();
}

}  // namespace graphmar::gradcheck
