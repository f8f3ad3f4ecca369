#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crossview/core/gradcheck.hpp"
#include "crossview/oracle/naive.hpp"
#include "crossview/vision/backbone.hpp"

using namespace crossview;

namespace {
ModelConfig bb_cfg() {
  ModelConfig cfg;
  cfg.input_side = 64;
  cfg.n_view = 2;
  cfg.stage_channels = {4, 8, 12, 16};
  cfg.lang_dim = 8;
  cfg.lang_len = 6;
  cfg.seed = 2;
  return cfg;
}
}  // namespace

TEST_CASE("stage features have the pyramid geometry and shared batch") {
  ModelConfig cfg = bb_cfg();
  ParamRegistry reg;
  Rng rng(cfg.seed);
  Backbone bb(reg, "backbone", cfg, rng);
  int b = 1 + cfg.n_view * cfg.n_view;  // remote + patches flow jointly
  Var x = constant(rng.uniform_tensor({b, 64, 64, 3}, 0, 1));
  for (int i = 1; i <= 4; ++i) {
    x = bb.encode_stage(i, x);
    CHECK(x->value.shape() ==
          std::vector<int>{b, cfg.stage_side(i), cfg.stage_side(i),
                           cfg.stage_channels[static_cast<size_t>(i - 1)]});
  }
}

TEST_CASE("stage sides halve") {
  ModelConfig cfg = bb_cfg();
  for (int i = 1; i <= 3; ++i) CHECK(cfg.stage_side(i) == 2 * cfg.stage_side(i + 1));
}

TEST_CASE("zero input with zeroed parameters gives a zero stage-1 feature") {
  ModelConfig cfg = bb_cfg();
  ParamRegistry reg;
  Rng rng(cfg.seed);
  Backbone bb(reg, "backbone", cfg, rng);
  reg.zero_params_with_prefix("backbone.stage1");
  Var x = constant(Tensor::zeros({2, 32, 32, 3}));
  Var y = bb.encode_stage(1, x);
  double mx = 0;
  for (int64_t i = 0; i < y->value.size(); ++i) mx = std::max(mx, std::abs(y->value[i]));
  CHECK(mx == 0.0);
}

TEST_CASE("window spanning the full side equals dense self-attention") {
  Rng rng(5);
  int side = 6, dim = 8;
  ParamRegistry reg;
  WindowBlock block(reg, "blk", dim, 1, side, rng);
  Tensor x = rng.uniform_tensor({1, side, side, dim}, -1, 1);
  Tensor got = block(constant(x))->value;

  // naive: pre-LN attention + residual, then pre-LN mlp + residual
  Tensor flat = x.reshaped({side * side, dim});
  Tensor ln1 = oracle::layer_norm(flat, block.ln1.gain->value, block.ln1.bias->value);
  Tensor q = oracle::linear(ln1, block.attn.wq.w->value, block.attn.wq.b->value);
  Tensor k = oracle::linear(ln1, block.attn.wk.w->value, block.attn.wk.b->value);
  Tensor v = oracle::linear(ln1, block.attn.wv.w->value, block.attn.wv.b->value);
  std::vector<uint8_t> allow(static_cast<size_t>(side * side) * side * side, 1);
  Tensor att = oracle::masked_cross_attention(q, k, v, allow);
  Tensor proj = oracle::linear(att, block.attn.proj.w->value, block.attn.proj.b->value);
  Tensor mid({side * side, dim});
  for (int64_t i = 0; i < mid.size(); ++i) mid[i] = flat[i] + proj[i];
  Tensor ln2 = oracle::layer_norm(mid, block.ln2.gain->value, block.ln2.bias->value);
  Tensor h1 = oracle::linear(ln2, block.mlp.fc1.w->value, block.mlp.fc1.b->value);
  for (int64_t i = 0; i < h1.size(); ++i)
    h1[i] = 0.5 * h1[i] * (1.0 + std::erf(h1[i] / std::sqrt(2.0)));
  Tensor h2 = oracle::linear(h1, block.mlp.fc2.w->value, block.mlp.fc2.b->value);
  Tensor expect({side * side, dim});
  for (int64_t i = 0; i < expect.size(); ++i) expect[i] = mid[i] + h2[i];

  CHECK(max_abs_diff(got.reshaped({side * side, dim}), expect) < 1e-6);
}

TEST_CASE("windowed attention only mixes tokens inside a window") {
  Rng rng(7);
  int side = 4, dim = 4, win = 2;
  ParamRegistry reg;
  WindowBlock block(reg, "blk", dim, 1, win, rng);
  Tensor x = rng.uniform_tensor({1, side, side, dim}, -1, 1);
  Tensor base = block(constant(x))->value;
  // perturb a pixel in the bottom-right window; top-left window must not move
  Tensor xt = x.clone();
  for (int c = 0; c < dim; ++c) xt[((0 * side + 3) * side + 3) * dim + c] += 1.0;
  Tensor moved = block(constant(xt))->value;
  for (int y = 0; y < win; ++y)
    for (int xx = 0; xx < win; ++xx)
      for (int c = 0; c < dim; ++c)
        CHECK(base[((0 * side + y) * side + xx) * dim + c] ==
              doctest::Approx(moved[((0 * side + y) * side + xx) * dim + c]).epsilon(1e-12));
}

TEST_CASE("two stage passes are deterministic") {
  ModelConfig cfg = bb_cfg();
  ParamRegistry reg;
  Rng rng(23);
  Backbone bb(reg, "backbone", cfg, rng);
  Tensor x = rng.uniform_tensor({2, 32, 32, 3}, 0, 1);
  Tensor a = bb.encode_stage(1, constant(x))->value;
  Tensor b = bb.encode_stage(1, constant(x))->value;
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("backbone stage gradient check at toy dims") {
  ModelConfig cfg = bb_cfg();
  cfg.stage_channels = {4, 6, 8, 10};
  ParamRegistry reg;
  Rng rng(29);
  BackboneStage stage(reg, "s", 3, 4, 4, 1, 4, rng);
  Var x = reg.param("x", rng.uniform_tensor({1, 8, 8, 3}, -1, 1));
  Tensor w = rng.uniform_tensor({1, 2, 2, 4}, -1, 1);
  auto rep = gradcheck_registry(reg, [&] { return dot_const(stage(x), w); }, 1e-5, 1, 30);
  INFO("worst param: ", rep.worst_param);
  CHECK(rep.max_rel_err < 1e-5);
}
