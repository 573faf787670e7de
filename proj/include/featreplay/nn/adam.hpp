#pragma once

#include "featreplay/nn/tensor.hpp"

#include <vector>

namespace featreplay::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Multiplicative learning-rate decay applied by end_epoch().
  double lr_decay = 0.99;
};

/// Adam with per-epoch exponential learning-rate decay.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamOptions options);

  void zero_grad();
  void step();
  void end_epoch() { lr_ *= options_.lr_decay; }

  double learning_rate() const { return lr_; }
  /// Number of scalar parameters under optimization.
  Eigen::Index parameter_count() const;
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  AdamOptions options_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  double lr_;
  long step_ = 0;
};

}  // namespace featreplay::nn
