#pragma once

#include "featreplay/nn/tensor.hpp"

#include <cstdint>
#include <vector>

namespace featreplay::nn {

/// Per-pixel softmax over the channel rows.
Mat softmax_channels(const Mat& logits);

struct LossGrad {
  double loss = 0.0;
  Mat dlogits;
};

/// Mean pixel cross-entropy plus per-sample soft Dice loss (averaged over
/// foreground classes and samples). `labels` holds one class index per column.
LossGrad cross_entropy_dice(const FeatureMap& logits, const std::vector<std::uint8_t>& labels, double smooth = 1.0);

/// Mean pixel cross-entropy against soft targets (rows sum to 1 per column).
LossGrad soft_cross_entropy(const FeatureMap& logits, const Mat& targets);

}  // namespace featreplay::nn
