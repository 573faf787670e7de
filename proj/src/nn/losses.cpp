#include "featreplay/nn/losses.hpp"

#include "featreplay/errors.hpp"

#include <cmath>

namespace featreplay::nn {

Mat softmax_channels(const Mat& logits) {
  Mat p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  const Eigen::RowVectorXd denom = p.colwise().sum();
  p.array().rowwise() /= denom.array();
  return p;
}

LossGrad cross_entropy_dice(const FeatureMap& logits, const std::vector<std::uint8_t>& labels, double smooth) {
  const Eigen::Index pixels = logits.data.cols();
  const int classes = logits.channels();
  if (static_cast<Eigen::Index>(labels.size()) != pixels) throw InputError("cross_entropy_dice: label count mismatch");

  const Mat p = softmax_channels(logits.data);
  LossGrad out;
  out.dlogits = p;
  double ce = 0.0;
  for (Eigen::Index i = 0; i < pixels; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    ce -= std::log(std::max(p(y, i), 1e-300));
    out.dlogits(y, i) -= 1.0;
  }
  out.dlogits /= static_cast<double>(pixels);
  out.loss = ce / static_cast<double>(pixels);

  if (classes < 2) return out;
  // Soft Dice: gradient w.r.t. probabilities, then chained through the softmax.
  Mat dprob = Mat::Zero(classes, pixels);
  const int plane = logits.plane();
  const double weight = 1.0 / (static_cast<double>(logits.batch) * (classes - 1));
  double dice_sum = 0.0;
  for (int n = 0; n < logits.batch; ++n) {
    const Eigen::Index base = static_cast<Eigen::Index>(n) * plane;
    for (int c = 1; c < classes; ++c) {
      double inter = 0.0, psum = 0.0, gsum = 0.0;
      for (int k = 0; k < plane; ++k) {
        const double g = labels[static_cast<std::size_t>(base + k)] == c ? 1.0 : 0.0;
        inter += p(c, base + k) * g;
        psum += p(c, base + k);
        gsum += g;
      }
      const double denom = psum + gsum + smooth;
      const double numer = 2.0 * inter + smooth;
      dice_sum += numer / denom;
      for (int k = 0; k < plane; ++k) {
        const double g = labels[static_cast<std::size_t>(base + k)] == c ? 1.0 : 0.0;
        dprob(c, base + k) = -weight * (2.0 * g * denom - numer) / (denom * denom);
      }
    }
  }
  out.loss += 1.0 - dice_sum * weight;
  const Eigen::RowVectorXd dot = (p.array() * dprob.array()).colwise().sum();
  Mat dsoft = dprob;
  dsoft.rowwise() -= dot;
  out.dlogits += (p.array() * dsoft.array()).matrix();
  return out;
}

LossGrad soft_cross_entropy(const FeatureMap& logits, const Mat& targets) {
  if (targets.rows() != logits.data.rows() || targets.cols() != logits.data.cols()) {
    throw InputError("soft_cross_entropy: target shape mismatch");
  }
  const Eigen::Index pixels = logits.data.cols();
  const Mat p = softmax_channels(logits.data);
  LossGrad out;
  out.loss = -(targets.array() * p.array().max(1e-300).log()).sum() / static_cast<double>(pixels);
  out.dlogits = (p - targets) / static_cast<double>(pixels);
  return out;
}

}  // namespace featreplay::nn
