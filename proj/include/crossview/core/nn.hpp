#pragma once

#include <cmath>
#include <string>

#include "crossview/core/autograd.hpp"
#include "crossview/core/geometry.hpp"
#include "crossview/core/registry.hpp"
#include "crossview/core/rng.hpp"

namespace crossview {

inline Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -k, k);
}

/// Channel remap y = x @ W + b on the last dimension. Doubles as the 1x1
/// convolution used throughout the model.
struct Linear {
  Var w, b;
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim, Rng& rng)
      : in(in_dim), out(out_dim) {
    w = reg.param(name + ".w", fan_in_uniform(rng, {in_dim, out_dim}, in_dim));
    b = reg.param(name + ".b", Tensor::zeros({out_dim}));
  }

  Var operator()(const Var& x) const {
    std::vector<int> shp = x->value.shape();
    int c = shp.back();
    require(c == in, "linear " + std::to_string(in) + "->" + std::to_string(out) +
                         ": input channels " + std::to_string(c));
    int64_t rows = x->value.size() / c;
    Var flat = reshape(x, {static_cast<int>(rows), c});
    Var y = add_bias(matmul(flat, w), b);
    shp.back() = out;
    return reshape(y, shp);
  }
};

using Conv1x1 = Linear;

/// 3x3 stride-1 pad-1 convolution on [H,W,C] or [B,H,W,C], via im2col.
struct Conv3x3 {
  Var w, b;
  int in = 0, out = 0;

  Conv3x3() = default;
  Conv3x3(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim, Rng& rng)
      : in(in_dim), out(out_dim) {
    w = reg.param(name + ".w", fan_in_uniform(rng, {9 * in_dim, out_dim}, 9 * in_dim));
    b = reg.param(name + ".b", Tensor::zeros({out_dim}));
  }

  Var operator()(const Var& x) const {
    bool batched = x->value.rank() == 4;
    require(batched || x->value.rank() == 3, "conv3x3: expected [H,W,C] or [B,H,W,C]");
    int h = x->value.dim(batched ? 1 : 0);
    int wdim = x->value.dim(batched ? 2 : 1);
    int c = x->value.dim(batched ? 3 : 2);
    require(c == in, "conv3x3: input channel mismatch");
    auto m = geom::im2col_3x3(h, wdim, c);
    if (batched) {
      int bsz = x->value.dim(0);
      Var cols = element_gather_batched(x, m, static_cast<int64_t>(h) * wdim * c,
                                        {h * wdim, 9 * c});
      Var flat = reshape(cols, {bsz * h * wdim, 9 * c});
      return reshape(add_bias(matmul(flat, w), b), {bsz, h, wdim, out});
    }
    Var cols = element_gather(x, m, {h * wdim, 9 * c});
    return reshape(add_bias(matmul(cols, w), b), {h, wdim, out});
  }
};

struct LayerNorm {
  Var gain, bias;
  int dim = 0;

  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, int d)
      : gain(reg.param(name + ".gain", Tensor::full({d}, 1.0))),
        bias(reg.param(name + ".bias", Tensor::zeros({d}))),
        dim(d) {}

  Var operator()(const Var& x) const { return layer_norm_lastdim(x, gain, bias); }
};

/// RAII switch that freezes running-statistic updates (finite-difference
/// probes re-run forward passes that must not disturb persistent state).
struct BnStatsFreeze {
  static bool& frozen() {
    thread_local bool f = false;
    return f;
  }
  bool prev;
  BnStatsFreeze() : prev(frozen()) { frozen() = true; }
  ~BnStatsFreeze() { frozen() = prev; }
};

/// With track_stats false (the default here) normalization always uses the
/// current batch's statistics; at inference the batch is the sample's own
/// view stack, so predictions stay deterministic per sample and there is no
/// train/eval statistics gap at tiny batch sizes. Running buffers are still
/// maintained for checkpoints and for track_stats=true eval.
struct BatchNorm {
  Var gamma, beta;
  std::shared_ptr<Tensor> running_mean, running_var;
  double momentum = 0.1;
  bool track_stats = false;

  BatchNorm() = default;
  BatchNorm(ParamRegistry& reg, const std::string& name, int c, bool track = false)
      : gamma(reg.param(name + ".gamma", Tensor::full({c}, 1.0))),
        beta(reg.param(name + ".beta", Tensor::zeros({c}))),
        running_mean(reg.buffer(name + ".running_mean", Tensor::zeros({c}))),
        running_var(reg.buffer(name + ".running_var", Tensor::full({c}, 1.0))),
        track_stats(track) {}

  Var operator()(const Var& x, bool training) const {
    bool use_batch_stats = training || !track_stats;
    return batch_norm_channels(x, gamma, beta, *running_mean, *running_var, use_batch_stats,
                               training && !BnStatsFreeze::frozen(), momentum);
  }
};

/// Two-layer MLP with GELU, the feed-forward half of the transformer blocks.
struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& name, int dim, int hidden, Rng& rng)
      : fc1(reg, name + ".fc1", dim, hidden, rng), fc2(reg, name + ".fc2", hidden, dim, rng) {}

  Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
};

}  // namespace crossview
