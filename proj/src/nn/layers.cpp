#include "featreplay/nn/layers.hpp"

#include "featreplay/errors.hpp"

#include <cmath>
#include <limits>

namespace featreplay::nn {

namespace {

Param make_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
  Param p{std::move(name), Mat::Zero(rows, cols), Mat::Zero(rows, cols)};
  return p;
}

void fill_normal(Mat& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
}

}  // namespace

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width) {
    throw InputError("concat_channels: spatial/batch mismatch");
  }
  FeatureMap out;
  out.batch = a.batch;
  out.height = a.height;
  out.width = a.width;
  out.data.resize(a.data.rows() + b.data.rows(), a.data.cols());
  out.data.topRows(a.data.rows()) = a.data;
  out.data.bottomRows(b.data.rows()) = b.data;
  return out;
}

FeatureMap concat_batch(const FeatureMap& a, const FeatureMap& b) {
  if (a.batch == 0) return b;
  if (b.batch == 0) return a;
  if (a.channels() != b.channels() || a.height != b.height || a.width != b.width) {
    throw InputError("concat_batch: channel/spatial mismatch");
  }
  FeatureMap out;
  out.batch = a.batch + b.batch;
  out.height = a.height;
  out.width = a.width;
  out.data.resize(a.data.rows(), a.data.cols() + b.data.cols());
  out.data.leftCols(a.data.cols()) = a.data;
  out.data.rightCols(b.data.cols()) = b.data;
  return out;
}

FeatureMap slice_batch(const FeatureMap& m, int first, int count) {
  FeatureMap out;
  out.batch = count;
  out.height = m.height;
  out.width = m.width;
  out.data = m.data.middleCols(static_cast<Eigen::Index>(first) * m.plane(), static_cast<Eigen::Index>(count) * m.plane());
  return out;
}

void zero_samples(FeatureMap& m, const std::vector<bool>& keep) {
  for (int n = 0; n < m.batch; ++n) {
    if (!keep[n]) m.data.middleCols(static_cast<Eigen::Index>(n) * m.plane(), m.plane()).setZero();
  }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel) {
  if (kernel != 1 && kernel != 3) throw ConfigError("Conv2d: kernel must be 1 or 3");
  weight_ = make_param(name + ".weight", out_channels, static_cast<Eigen::Index>(in_channels) * kernel * kernel);
  bias_ = make_param(name + ".bias", out_channels, 1);
  fill_normal(weight_.value, std::sqrt(2.0 / (in_channels * kernel * kernel)), rng);
}

Mat Conv2d::im2col(const FeatureMap& x) const {
  if (kernel_ == 1) return x.data;
  const int h = x.height, w = x.width, pad = kernel_ / 2;
  const Eigen::Index cols = static_cast<Eigen::Index>(x.batch) * h * w;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(in_) * kernel_ * kernel_, cols);
  for (int c = 0; c < in_; ++c) {
    const double* src = x.data.row(c).data();
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        double* dst = out.row((c * kernel_ + ky) * kernel_ + kx).data();
        const int oy = ky - pad, ox = kx - pad;
        for (int n = 0; n < x.batch; ++n) {
          const Eigen::Index base = static_cast<Eigen::Index>(n) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + oy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
            const double* s = src + base + static_cast<Eigen::Index>(sy) * w + ox;
            double* d = dst + base + static_cast<Eigen::Index>(y) * w;
            for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
          }
        }
      }
    }
  }
  return out;
}

FeatureMap Conv2d::col2im(const Mat& cols, int batch, int h, int w) const {
  FeatureMap out(in_, batch, h, w);
  if (kernel_ == 1) {
    out.data = cols;
    return out;
  }
  const int pad = kernel_ / 2;
  for (int c = 0; c < in_; ++c) {
    double* dst = out.data.row(c).data();
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const double* src = cols.row((c * kernel_ + ky) * kernel_ + kx).data();
        const int oy = ky - pad, ox = kx - pad;
        for (int n = 0; n < batch; ++n) {
          const Eigen::Index base = static_cast<Eigen::Index>(n) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + oy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
            double* d = dst + base + static_cast<Eigen::Index>(sy) * w + ox;
            const double* s = src + base + static_cast<Eigen::Index>(y) * w;
            for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
          }
        }
      }
    }
  }
  return out;
}

FeatureMap Conv2d::forward(const FeatureMap& x) {
  cols_ = im2col(x);
  batch_ = x.batch;
  height_ = x.height;
  width_ = x.width;
  FeatureMap y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.noalias() = weight_.value * cols_;
  y.data.colwise() += bias_.value.col(0);
  return y;
}

FeatureMap Conv2d::infer(const FeatureMap& x) const {
  if (x.channels() != in_) throw InputError("Conv2d: channel mismatch");
  FeatureMap y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.noalias() = weight_.value * im2col(x);
  y.data.colwise() += bias_.value.col(0);
  return y;
}

FeatureMap Conv2d::backward(const FeatureMap& dy, bool input_grad) {
  weight_.grad.noalias() += dy.data * cols_.transpose();
  bias_.grad.col(0) += dy.data.rowwise().sum();
  if (!input_grad) return {};
  const Mat dcols = weight_.value.transpose() * dy.data;
  return col2im(dcols, batch_, height_, width_);
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, double momentum, double eps)
    : name_(std::move(name)), momentum_(momentum), eps_(eps) {
  gamma_ = make_param(name_ + ".gamma", channels, 1);
  gamma_.value.setOnes();
  beta_ = make_param(name_ + ".beta", channels, 1);
  running_mean_ = Mat::Zero(channels, 1);
  running_var_ = Mat::Ones(channels, 1);
}

std::vector<Buffer> BatchNorm::buffers() {
  return {{name_ + ".running_mean", &running_mean_}, {name_ + ".running_var", &running_var_}};
}

Mat BatchNorm::forward(const Mat& x, Mode mode) {
  mode_ = mode;
  const Eigen::Index m = x.cols();
  if (mode == Mode::Eval) {
    inv_std_ = (running_var_.col(0).array() + eps_).rsqrt().matrix();
    xhat_ = (x.colwise() - running_mean_.col(0)).array().colwise() * inv_std_.array();
  } else {
    if (m < 2) throw InputError("BatchNorm: training mode needs at least two values per channel");
    const Vec mean = x.rowwise().mean();
    const Mat centered = x.colwise() - mean;
    const Vec var = centered.array().square().rowwise().sum().matrix() / static_cast<double>(m);
    inv_std_ = (var.array() + eps_).rsqrt().matrix();
    xhat_ = centered.array().colwise() * inv_std_.array();
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    running_mean_.col(0) = (1.0 - momentum_) * running_mean_.col(0) + momentum_ * mean;
    running_var_.col(0) = (1.0 - momentum_) * running_var_.col(0) + momentum_ * unbias * var;
  }
  Mat y = xhat_.array().colwise() * gamma_.value.col(0).array();
  y.colwise() += beta_.value.col(0);
  return y;
}

Mat BatchNorm::infer(const Mat& x) const {
  const Vec scale = gamma_.value.col(0).array() * (running_var_.col(0).array() + eps_).rsqrt();
  const Vec shift = beta_.value.col(0).array() - running_mean_.col(0).array() * scale.array();
  Mat y = x.array().colwise() * scale.array();
  y.colwise() += shift;
  return y;
}

Mat BatchNorm::backward(const Mat& dy) {
  gamma_.grad.col(0) += (dy.array() * xhat_.array()).rowwise().sum().matrix();
  beta_.grad.col(0) += dy.rowwise().sum();
  const Mat dxhat = dy.array().colwise() * gamma_.value.col(0).array();
  if (mode_ == Mode::Eval) {
    return dxhat.array().colwise() * inv_std_.array();
  }
  const double m = static_cast<double>(dy.cols());
  const Vec sum_dxhat = dxhat.rowwise().sum();
  const Vec sum_dxhat_xhat = (dxhat.array() * xhat_.array()).rowwise().sum().matrix();
  Mat dx = (dxhat * m).colwise() - sum_dxhat;
  dx -= (xhat_.array().colwise() * sum_dxhat_xhat.array()).matrix();
  dx = dx.array().colwise() * (inv_std_.array() / m);
  return dx;
}

// ---------------------------------------------------------------------------
// LeakyRelu

Mat LeakyRelu::forward(const Mat& x) {
  input_ = x;
  return infer(x);
}

Mat LeakyRelu::infer(const Mat& x) const {
  const double slope = slope_;
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Mat LeakyRelu::backward(const Mat& dy) const {
  return dy.binaryExpr(input_, [s = slope_](double g, double v) { return v > 0.0 ? g : s * g; });
}

// ---------------------------------------------------------------------------
// MaxPool2

FeatureMap MaxPool2::forward(const FeatureMap& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0) throw InputError("MaxPool2: odd spatial size");
  channels_ = x.channels();
  batch_ = x.batch;
  height_ = x.height;
  width_ = x.width;
  const int oh = x.height / 2, ow = x.width / 2;
  FeatureMap y(x.channels(), x.batch, oh, ow);
  argmax_.assign(static_cast<std::size_t>(y.data.size()), 0);
  for (int c = 0; c < x.channels(); ++c) {
    for (int n = 0; n < x.batch; ++n) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          Eigen::Index best_idx = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx = (static_cast<Eigen::Index>(n) * x.height + 2 * oy + dy) * x.width + 2 * ox + dx;
              const double v = x.data(c, idx);
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          const Eigen::Index out_idx = (static_cast<Eigen::Index>(n) * oh + oy) * ow + ox;
          y.data(c, out_idx) = best;
          argmax_[static_cast<std::size_t>(c * y.data.cols() + out_idx)] = best_idx;
        }
      }
    }
  }
  return y;
}

FeatureMap MaxPool2::infer(const FeatureMap& x) const {
  if (x.height % 2 != 0 || x.width % 2 != 0) throw InputError("MaxPool2: odd spatial size");
  const int oh = x.height / 2, ow = x.width / 2;
  FeatureMap y(x.channels(), x.batch, oh, ow);
  for (int c = 0; c < x.channels(); ++c) {
    for (int n = 0; n < x.batch; ++n) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          y.at(c, n, oy, ox) = std::max(std::max(x.at(c, n, 2 * oy, 2 * ox), x.at(c, n, 2 * oy, 2 * ox + 1)),
                                        std::max(x.at(c, n, 2 * oy + 1, 2 * ox), x.at(c, n, 2 * oy + 1, 2 * ox + 1)));
        }
      }
    }
  }
  return y;
}

FeatureMap MaxPool2::backward(const FeatureMap& dy) const {
  FeatureMap dx(channels_, batch_, height_, width_);
  for (int c = 0; c < channels_; ++c) {
    for (Eigen::Index i = 0; i < dy.data.cols(); ++i) {
      dx.data(c, argmax_[static_cast<std::size_t>(c * dy.data.cols() + i)]) += dy.data(c, i);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// UpConv2

UpConv2::UpConv2(std::string name, int in_channels, int out_channels, Rng& rng) : in_(in_channels), out_(out_channels) {
  weight_ = make_param(name + ".weight", static_cast<Eigen::Index>(out_channels) * 4, in_channels);
  bias_ = make_param(name + ".bias", out_channels, 1);
  fill_normal(weight_.value, std::sqrt(2.0 / in_channels), rng);
}

FeatureMap UpConv2::scatter(const Mat& taps, int batch, int h, int w) const {
  FeatureMap y(out_, batch, 2 * h, 2 * w);
  for (int o = 0; o < out_; ++o) {
    const double b = bias_.value(o, 0);
    for (int d = 0; d < 4; ++d) {
      const int dy = d / 2, dx = d % 2;
      const double* src = taps.row(o * 4 + d).data();
      for (int n = 0; n < batch; ++n) {
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w; ++xx) {
            y.at(o, n, 2 * yy + dy, 2 * xx + dx) = src[(static_cast<Eigen::Index>(n) * h + yy) * w + xx] + b;
          }
        }
      }
    }
  }
  return y;
}

FeatureMap UpConv2::forward(const FeatureMap& x) {
  input_ = x.data;
  batch_ = x.batch;
  height_ = x.height;
  width_ = x.width;
  return infer(x);
}

FeatureMap UpConv2::infer(const FeatureMap& x) const {
  if (x.channels() != in_) throw InputError("UpConv2: channel mismatch");
  const Mat taps = weight_.value * x.data;
  return scatter(taps, x.batch, x.height, x.width);
}

FeatureMap UpConv2::backward(const FeatureMap& dy, bool input_grad) {
  Mat gathered(static_cast<Eigen::Index>(out_) * 4, static_cast<Eigen::Index>(batch_) * height_ * width_);
  for (int o = 0; o < out_; ++o) {
    bias_.grad(o, 0) += dy.data.row(o).sum();
    for (int d = 0; d < 4; ++d) {
      const int oy = d / 2, ox = d % 2;
      double* dst = gathered.row(o * 4 + d).data();
      for (int n = 0; n < batch_; ++n) {
        for (int yy = 0; yy < height_; ++yy) {
          for (int xx = 0; xx < width_; ++xx) {
            dst[(static_cast<Eigen::Index>(n) * height_ + yy) * width_ + xx] = dy.at(o, n, 2 * yy + oy, 2 * xx + ox);
          }
        }
      }
    }
  }
  weight_.grad.noalias() += gathered * input_.transpose();
  if (!input_grad) return {};
  FeatureMap dx;
  dx.batch = batch_;
  dx.height = height_;
  dx.width = width_;
  dx.data.noalias() = weight_.value.transpose() * gathered;
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features, Rng& rng) {
  weight_ = make_param(name + ".weight", out_features, in_features);
  bias_ = make_param(name + ".bias", out_features, 1);
  fill_normal(weight_.value, std::sqrt(1.0 / in_features), rng);
}

Mat Linear::forward(const Mat& x) {
  input_ = x;
  return infer(x);
}

Mat Linear::infer(const Mat& x) const {
  if (x.rows() != weight_.value.cols()) throw InputError("Linear: input width mismatch");
  Mat y = weight_.value * x;
  y.colwise() += bias_.value.col(0);
  return y;
}

Mat Linear::backward(const Mat& dy, bool input_grad) {
  weight_.grad.noalias() += dy * input_.transpose();
  bias_.grad.col(0) += dy.rowwise().sum();
  if (!input_grad) return {};
  return weight_.value.transpose() * dy;
}

}  // namespace featreplay::nn
