#pragma once

#include "featreplay/nn/tensor.hpp"
#include "featreplay/rng.hpp"

#include <string>
#include <vector>

namespace featreplay::nn {

// Every layer has two forward paths: forward() caches what backward() needs
// and infer() is const, cache-free and always uses inference semantics.

/// Same-padded square convolution with stride 1 (kernel 1 or 3).
class Conv2d {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng);

  FeatureMap forward(const FeatureMap& x);
  FeatureMap infer(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy, bool input_grad = true);

  std::vector<Param*> params() { return {&weight_, &bias_}; }

 private:
  Mat im2col(const FeatureMap& x) const;
  FeatureMap col2im(const Mat& cols, int batch, int h, int w) const;

  int in_;
  int out_;
  int kernel_;
  Param weight_;
  Param bias_;
  Mat cols_;
  int batch_ = 0, height_ = 0, width_ = 0;
};

/// Batch normalization over the rows of a matrix (channels for 2D maps,
/// features for dense activations).
class BatchNorm {
 public:
  BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

  Mat forward(const Mat& x, Mode mode);
  Mat infer(const Mat& x) const;
  Mat backward(const Mat& dy);

  std::vector<Param*> params() { return {&gamma_, &beta_}; }
  std::vector<Buffer> buffers();

 private:
  std::string name_;
  double momentum_;
  double eps_;
  Param gamma_;
  Param beta_;
  Mat running_mean_;
  Mat running_var_;
  Mat xhat_;
  Vec inv_std_;
  Mode mode_ = Mode::Train;
};

class LeakyRelu {
 public:
  explicit LeakyRelu(double slope) : slope_(slope) {}

  Mat forward(const Mat& x);
  Mat infer(const Mat& x) const;
  Mat backward(const Mat& dy) const;

 private:
  double slope_;
  Mat input_;
};

/// 2x2 max pooling with stride 2.
class MaxPool2 {
 public:
  FeatureMap forward(const FeatureMap& x);
  FeatureMap infer(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy) const;

 private:
  std::vector<Eigen::Index> argmax_;
  int channels_ = 0, batch_ = 0, height_ = 0, width_ = 0;
};

/// Transposed convolution with kernel 2 and stride 2 (doubles H and W).
class UpConv2 {
 public:
  UpConv2(std::string name, int in_channels, int out_channels, Rng& rng);

  FeatureMap forward(const FeatureMap& x);
  FeatureMap infer(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy, bool input_grad = true);

  std::vector<Param*> params() { return {&weight_, &bias_}; }

 private:
  FeatureMap scatter(const Mat& taps, int batch, int h, int w) const;

  int in_;
  int out_;
  Param weight_;  // (out * 4) x in, rows ordered (channel, dy, dx)
  Param bias_;
  Mat input_;
  int batch_ = 0, height_ = 0, width_ = 0;
};

/// Dense layer acting on column vectors: y = W x + b, x is (in x batch).
class Linear {
 public:
  Linear(std::string name, int in_features, int out_features, Rng& rng);

  Mat forward(const Mat& x);
  Mat infer(const Mat& x) const;
  Mat backward(const Mat& dy, bool input_grad = true);

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }

 private:
  Param weight_;
  Param bias_;
  Mat input_;
};

}  // namespace featreplay::nn
