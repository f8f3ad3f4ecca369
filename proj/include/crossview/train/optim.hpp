#pragma once

#include <cmath>
#include <vector>

#include "crossview/core/registry.hpp"

namespace crossview {

/// Polynomial decay: lr0 * (1 - step/total)^power for step in [0, total).
inline double poly_lr(double lr0, int64_t step, int64_t total_steps, double power) {
  require(total_steps > 0, "poly_lr: total_steps must be positive");
  double frac = 1.0 - static_cast<double>(std::min(step, total_steps)) / total_steps;
  return lr0 * std::pow(frac, power);
}

/// Adam with decoupled weight decay. Moment buffers align with registry
/// order; `t` counts completed steps for bias correction.
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;
  int64_t t = 0;

  AdamW() = default;
  AdamW(const ParamRegistry& reg, double wd) : weight_decay(wd) {
    for (const auto& [name, p] : reg.params()) {
      m_.push_back(Tensor::zeros(p->value.shape()));
      v_.push_back(Tensor::zeros(p->value.shape()));
    }
  }

  void step(ParamRegistry& reg, double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    size_t i = 0;
    for (const auto& [name, p] : reg.params()) {
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      Tensor& theta = p->value;
      const Tensor& g = p->ensure_grad();
      for (int64_t j = 0; j < theta.size(); ++j) {
        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        theta[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * theta[j]);
      }
      ++i;
    }
  }

  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }
  const std::vector<Tensor>& m() const { return m_; }
  const std::vector<Tensor>& v() const { return v_; }

 private:
  std::vector<Tensor> m_, v_;
};

}  // namespace crossview
