#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace featreplay::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Trainable tensor plus its accumulated gradient.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

/// Non-trainable state that is still checkpointed (batch-norm running statistics).
struct Buffer {
  std::string name;
  Mat* value;
};

enum class Mode { Train, Eval };

/// Planar batch of 2D feature maps: one row per channel, each row holding the
/// batch's planes back to back (sample-major, then y, then x).
struct FeatureMap {
  Mat data;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_size, int h, int w)
      : data(Mat::Zero(channels, static_cast<Eigen::Index>(batch_size) * h * w)), batch(batch_size), height(h), width(w) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int plane() const { return height * width; }
  double& at(int c, int n, int y, int x) { return data(c, (static_cast<Eigen::Index>(n) * height + y) * width + x); }
  double at(int c, int n, int y, int x) const { return data(c, (static_cast<Eigen::Index>(n) * height + y) * width + x); }
};

/// Stack two maps along the channel axis.
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

/// Stack two maps along the batch axis.
FeatureMap concat_batch(const FeatureMap& a, const FeatureMap& b);

/// Select samples [first, first+count) of a batch.
FeatureMap slice_batch(const FeatureMap& m, int first, int count);

/// Zero every sample whose flag is false.
void zero_samples(FeatureMap& m, const std::vector<bool>& keep);

}  // namespace featreplay::nn
