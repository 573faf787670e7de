#include "featreplay/nn/adam.hpp"

#include <cmath>

namespace featreplay::nn {

Adam::Adam(std::vector<Param*> params, AdamOptions options)
    : params_(std::move(params)), options_(options), lr_(options.lr) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double step_size = lr_ / correction1;
  const double sqrt_c2 = std::sqrt(correction2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() / sqrt_c2 + options_.eps);
  }
}

Eigen::Index Adam::parameter_count() const {
  Eigen::Index n = 0;
  for (const Param* p : params_) n += p->size();
  return n;
}

}  // namespace featreplay::nn
