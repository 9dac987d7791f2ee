#pragma once

#include <span>
#include <string>

#include "graphmar/autodiff.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar {

/// (x - min) / (max - min); a constant map becomes all zeros.
Tensor minmax_norm(const Tensor& map);

enum class AlignmentVariant { kMse, kKl };

AlignmentVariant parse_alignment_variant(const std::string& name);
std::string to_string(AlignmentVariant v);

/// Alignment between the attention map and the density prior, both min-max
/// normalized. MSE: mean squared difference. KL: KL(G || G_A) after shifting by
/// 1e-8 and renormalizing to unit sum. Exactly 0 when n_implants <= 1.
double geometric_alignment_loss(const Tensor& attention, const Tensor& density, int n_implants,
                                AlignmentVariant variant = AlignmentVariant::kMse);

/// Differentiable batch form: attention is N x 1 x h x w on the tape, density
/// the matching constant. Samples with fewer than two implants contribute
/// zero; the result is the mean over the batch.
ad::Var alignment_loss(ad::Tape& tape, ad::Var attention, const Tensor& density, std::span<const int> n_implants,
                       AlignmentVariant variant = AlignmentVariant::kMse);

struct LossReport {
  double l1 = 0.0;
  double graph = 0.0;
  double total = 0.0;
  double lambda = 0.1;
};

/// Mean absolute error plus lambda times the alignment term.
LossReport total_loss(const Tensor& prediction, const Tensor& target, double graph_loss, double lambda = 0.1);

}  // namespace graphmar
