#pragma once

#include "agcrf/tape.hpp"
#include "agcrf/tensor.hpp"

namespace agcrf {

constexpr double kProbClamp = 1e-12;
constexpr int kIgnoreLabel = 255;

/// Class-balanced binary cross-entropy, summed over pixels:
///   -beta * sum_{E+} log p - (1 - beta) * sum_{E-} log(1 - p)
/// with beta = |E+| / N. `hed_beta` swaps the weights so positives get the
/// negative-class fraction instead. p is clamped to [1e-12, 1 - 1e-12].
/// Throws std::invalid_argument if the target is not binary.
double balanced_bce(const Tensor& prob, const Tensor& target, bool hed_beta = false);
Var balanced_bce(Var prob, const Tensor& target, bool hed_beta = false);

/// Positive-class weight used by balanced_bce.
double bce_beta(const Tensor& target, bool hed_beta);

/// Mean squared error over pixels with mask != 0; 0 if no pixel is valid.
/// pred and target are [1, H, W]; mask is [1, H, W].
double l2_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);
Var l2_loss(Var pred, const Tensor& target, const Tensor& mask);

/// Mean of -log softmax(logits)[label] over pixels whose label is not `ignore`.
/// logits [K, H, W]; labels [1, H, W] holding integers.
double ce_loss(const Tensor& logits, const Tensor& labels, int ignore = kIgnoreLabel);
Var ce_loss(Var logits, const Tensor& labels, int ignore = kIgnoreLabel);

}  // namespace agcrf
