#include "graphmar/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace graphmar {

Tensor minmax_norm(const Tensor& map) {
  Tensor out = Tensor::zeros_like(map);
  if (map.empty()) return out;
  const double lo = map.min();
  const double hi = map.max();
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = static_cast<float>((map[i] - lo) / (hi - lo));
  return out;
}

AlignmentVariant parse_alignment_variant(const std::string& name) {
  if (name == "mse") return AlignmentVariant::kMse;
  if (name == "kl") return AlignmentVariant::kKl;
  throw std::invalid_argument("unknown alignment loss '" + name + "' (expected mse or kl)");
}

std::string to_string(AlignmentVariant v) { return v == AlignmentVariant::kMse ? "mse" : "kl"; }

double geometric_alignment_loss(const Tensor& attention, const Tensor& density, int n_implants,
                                AlignmentVariant variant) {
  if (attention.shape() != density.shape())
    throw std::invalid_argument("alignment loss: shape mismatch " + shape_to_string(attention.shape()) + " vs " +
                                shape_to_string(density.shape()));
  if (n_implants <= 1) return 0.0;
  const Tensor a = minmax_norm(attention);
  const Tensor g = minmax_norm(density);
  const std::size_t n = a.size();
  if (variant == AlignmentVariant::kMse) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = static_cast<double>(a[i]) - g[i];
      acc += e * e;
    }
    return acc / static_cast<double>(n);
  }
  constexpr double kFloor = 1e-8;
  double sa = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += a[i] + kFloor;
    sg += g[i] + kFloor;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (g[i] + kFloor) / sg;
    const double q = (a[i] + kFloor) / sa;
    kl += p * std::log(p / q);
  }
  return kl;
}

ad::Var alignment_loss(ad::Tape& tape, ad::Var attention, const Tensor& density, std::span<const int> n_implants,
                       AlignmentVariant variant) {
  const Tensor& att = tape.value(attention);
  if (att.shape() != density.shape())
    throw std::invalid_argument("alignment loss: shape mismatch " + shape_to_string(att.shape()) + " vs " +
                                shape_to_string(density.shape()));
  const int batch = att.dim(0);
  if (n_implants.size() != static_cast<std::size_t>(batch))
    throw std::invalid_argument("alignment loss: one implant count per sample required");

  const std::size_t per = att.size() / static_cast<std::size_t>(batch);
  std::vector<ad::Var> terms;
  std::vector<float> factors;
  for (int n = 0; n < batch; ++n) {
    if (n_implants[n] <= 1) continue;
    Shape shape = density.shape();
    shape[0] = 1;
    std::vector<float> g(density.data().begin() + n * per, density.data().begin() + (n + 1) * per);
    const ad::Var target = tape.constant(minmax_norm(Tensor(shape, std::move(g))));
    const ad::Var pred = ad::minmax_normalize(tape, ad::select_sample(tape, attention, n));
    terms.push_back(variant == AlignmentVariant::kMse ? ad::mean_squared_error(tape, pred, target)
                                                      : ad::kl_divergence(tape, target, pred));
    factors.push_back(1.0f / static_cast<float>(batch));
  }
  if (terms.empty()) return tape.constant(Tensor({1}, 0.0f));
  return ad::weighted_scalar_sum(tape, terms, factors);
}

LossReport total_loss(const Tensor& prediction, const Tensor& target, double graph_loss, double lambda) {
  if (prediction.shape() != target.shape()) throw std::invalid_argument("total_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) acc += std::fabs(static_cast<double>(prediction[i]) - target[i]);
  LossReport r;
  r.l1 = prediction.empty() ? 0.0 : acc / static_cast<double>(prediction.size());
  r.graph = graph_loss;
  r.lambda = lambda;
  r.total = r.l1 + lambda * graph_loss;
  return r;
}

}  // namespace graphmar
