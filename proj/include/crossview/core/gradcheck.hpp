#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "crossview/core/autograd.hpp"
#include "crossview/core/registry.hpp"

namespace crossview {

/// ||a-b|| / max(||a|| + ||b||, floor); the comparison used by every
/// gradient check in the suite. The floor keeps mathematically-zero
/// gradients (for example a key bias under softmax) from dividing
/// finite-difference noise by itself.
inline double l2_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                         double floor_ = 1e-4) {
  require(a.size() == b.size(), "l2_rel_err: size mismatch");
  double d2 = 0.0, a2 = 0.0, b2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    d2 += (a[i] - b[i]) * (a[i] - b[i]);
    a2 += a[i] * a[i];
    b2 += b[i] * b[i];
  }
  double denom = std::max(std::sqrt(a2) + std::sqrt(b2), floor_);
  return std::sqrt(d2) / denom;
}

/// Central-difference check of d(loss)/d(param) for one parameter tensor.
/// `forward` must rebuild the loss from scratch; `sample_stride` > 1 checks a
/// strided subset of entries (for large tensors).
inline double check_param_against_fd(const std::function<double()>& forward, const Var& param,
                                     const Tensor& analytic_grad, double eps = 1e-5,
                                     int sample_stride = 1) {
  std::vector<double> fd, an;
  Tensor& theta = param->value;
  for (int64_t i = 0; i < theta.size(); i += sample_stride) {
    double saved = theta[i];
    theta[i] = saved + eps;
    double up = forward();
    theta[i] = saved - eps;
    double down = forward();
    theta[i] = saved;
    fd.push_back((up - down) / (2.0 * eps));
    an.push_back(analytic_grad[i]);
  }
  return l2_rel_err(fd, an);
}

/// Runs one backward pass of `build_loss` and then compares the analytic
/// gradient of each registry parameter against central differences.
/// Returns the worst relative error along with its parameter name.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::vector<std::pair<std::string, double>> per_param;
};

inline GradCheckReport gradcheck_registry(ParamRegistry& reg,
                                          const std::function<Var()>& build_loss,
                                          double eps = 1e-5, int sample_stride = 1,
                                          int max_entries_per_param = 0) {
  reg.zero_grad();
  Var loss = build_loss();
  backward(loss);

  std::vector<std::pair<std::string, Tensor>> grads;
  for (const auto& [name, p] : reg.params())
    grads.emplace_back(name, p->grad.empty() ? Tensor::zeros(p->value.shape()) : p->grad.clone());

  auto eval = [&]() {
    NoGradGuard ng;
    return build_loss()->value[0];
  };

  GradCheckReport rep;
  size_t gi = 0;
  for (const auto& [name, p] : reg.params()) {
    int stride = sample_stride;
    if (max_entries_per_param > 0) {
      int64_t want = max_entries_per_param;
      stride = static_cast<int>(std::max<int64_t>(stride, (p->value.size() + want - 1) / want));
    }
    double err = check_param_against_fd(eval, p, grads[gi].second, eps, stride);
    rep.per_param.emplace_back(name, err);
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_param = name;
    }
    ++gi;
  }
  return rep;
}

/// FD check of d(loss)/d(input) for a non-parameter leaf.
inline double gradcheck_input(const Var& input, const std::function<Var()>& build_loss,
                              double eps = 1e-5) {
  Var loss = build_loss();
  backward(loss);
  Tensor analytic = input->grad.empty() ? Tensor::zeros(input->value.shape()) : input->grad.clone();
  auto eval = [&]() {
    NoGradGuard ng;
    return build_loss()->value[0];
  };
  return check_param_against_fd(eval, input, analytic, eps, 1);
}

}  // namespace crossview
