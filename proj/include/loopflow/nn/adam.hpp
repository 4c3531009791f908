#pragma once

#include <cmath>
#include <vector>

#include "loopflow/nn/graph.hpp"

namespace loopflow::nn {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_weight = 1e-8;  // added to the gradient of decaying parameters
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_{std::move(params)}, cfg_{cfg} {
    for (auto* p : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      if (p.grad.size() != p.value.size()) p.zero_grad();
      Mat g = p.grad;
      if (p.decay && cfg_.l2_weight != 0.0) g += cfg_.l2_weight * p.value;
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p.value.array() -= cfg_.learning_rate * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace loopflow::nn
