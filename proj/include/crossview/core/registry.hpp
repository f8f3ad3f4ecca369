#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossview/core/autograd.hpp"

namespace crossview {

/// Owns every learnable parameter and persistent buffer of a model under a
/// flat hierarchical name. Registration order is construction order, which is
/// deterministic for a given config, so optimizers and checkpoints can rely
/// on stable iteration.
class ParamRegistry {
 public:
  Var param(const std::string& name, Tensor init) {
    require(!index_.count(name), "duplicate parameter name: " + name);
    Var v = make_leaf(std::move(init), true);
    index_[name] = params_.size();
    params_.emplace_back(name, v);
    return v;
  }

  std::shared_ptr<Tensor> buffer(const std::string& name, Tensor init) {
    require(!buffer_index_.count(name), "duplicate buffer name: " + name);
    auto t = std::make_shared<Tensor>(std::move(init));
    buffer_index_[name] = buffers_.size();
    buffers_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& buffers() const {
    return buffers_;
  }

  Var find(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second].second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::shared_ptr<Tensor> find_buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    require(it != buffer_index_.end(), "unknown buffer: " + name);
    return buffers_[it->second].second;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : params_)
      if (!v->grad.empty()) v->grad.fill(0.0);
  }

  /// Zeroes every parameter whose name starts with the prefix (test hook).
  void zero_params_with_prefix(const std::string& prefix) {
    for (auto& [name, v] : params_)
      if (name.rfind(prefix, 0) == 0) v->value.fill(0.0);
  }

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
  std::unordered_map<std::string, size_t> index_;
  std::unordered_map<std::string, size_t> buffer_index_;
};

}  // namespace crossview
