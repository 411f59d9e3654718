#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "evsnn/tensor.hpp"

namespace evsnn {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place; `step` counts from 1.
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, const AdamConfig& cfg, long step) {
  if (param.size() != m.size() || param.size() != v.size() || (!grad.empty() && grad.size() != param.size()))
    throw ShapeError("adam_update: buffer size mismatch");
  if (step < 1) throw ContractError("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Adam over a fixed parameter list. Parameters without a populated gradient
/// are treated as having zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      std::span<const double> g = p.has_grad() ? p.grad() : std::span<const double>{};
      adam_update(p.mutable_data(), g, m_[i], v_[i], cfg_, t_);
    }
  }

  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace evsnn
