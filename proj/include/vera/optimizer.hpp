#pragma once

#include "vera/common.hpp"

#include <vector>

namespace vera {

/// Adaptive-moment first-order optimizer with bias correction. Parameters are
/// borrowed; the caller keeps ownership and layout stable across steps.
class Adam {
 public:
  explicit Adam(std::vector<Mat*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    for (Mat* p : params_) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }

  void step(const std::vector<Mat>& grads) {
    if (grads.size() != params_.size()) throw ArgumentError("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
      const Mat mhat = m_[i] / c1;
      const Mat vhat = v_[i] / c2;
      *params_[i] -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + epsilon_).matrix());
    }
  }

  double learning_rate() const { return lr_; }

 private:
  std::vector<Mat*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, epsilon_;
  int t_ = 0;
};

}  // namespace vera
