#pragma once

#include <string>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/text.hpp"

namespace crossview {

/// Local windowed self-attention block over [B,H,W,C]. Windows are
/// non-overlapping squares of side min(win_size, feature side); with the
/// window spanning the whole feature it is plain dense self-attention.
struct WindowBlock {
  LayerNorm ln1, ln2;
  SelfAttention attn;
  Mlp mlp;
  int win = 0;

  WindowBlock() = default;
  WindowBlock(ParamRegistry& reg, const std::string& name, int dim, int heads, int win_size,
              Rng& rng)
      : ln1(reg, name + ".ln1", dim),
        ln2(reg, name + ".ln2", dim),
        attn(reg, name + ".attn", dim, heads, rng),
        mlp(reg, name + ".mlp", dim, 2 * dim, rng),
        win(win_size) {}

  Var operator()(const Var& x) const {
    int b = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
    int we = std::min(win, std::min(h, w));
    require(h % we == 0 && w % we == 0, "window block: side not divisible by window");
    int nw = (h / we) * (w / we);
    auto part = geom::window_partition(h, w, we, c);
    auto merge = geom::window_merge(h, w, we, c);
    int64_t per = static_cast<int64_t>(h) * w * c;

    Var tokens = reshape(element_gather_batched(x, part, per, {nw, we * we, c}),
                         {b * nw, we * we, c});
    Var y = add(tokens, attn(ln1(tokens)));
    Var merged = element_gather_batched(reshape(y, {b, nw, we, we, c}), merge, per, {h, w, c});
    Var z = add(reshape(merged, {b * h * w, c}), mlp(ln2(reshape(merged, {b * h * w, c}))));
    return reshape(z, {b, h, w, c});
  }
};

/// One encoder stage: a strided patch projection (4x4 stem for stage 1,
/// 2x2 merge otherwise) followed by two windowed attention blocks.
struct BackboneStage {
  Linear reduce;
  LayerNorm norm;
  WindowBlock block1, block2;
  int patch = 0;  // downsample factor of this stage
  int in_ch = 0;

  BackboneStage() = default;
  BackboneStage(ParamRegistry& reg, const std::string& name, int in_channels, int out_channels,
                int patch_size, int heads, int win, Rng& rng)
      : reduce(reg, name + ".reduce", patch_size * patch_size * in_channels, out_channels, rng),
        norm(reg, name + ".norm", out_channels),
        block1(reg, name + ".block1", out_channels, heads, win, rng),
        block2(reg, name + ".block2", out_channels, heads, win, rng),
        patch(patch_size),
        in_ch(in_channels) {}

  Var operator()(const Var& images) const {
    int b = images->value.dim(0), h = images->value.dim(1), w = images->value.dim(2),
        c = images->value.dim(3);
    require(c == in_ch, "backbone stage: channel mismatch");
    if (h % patch != 0 || w % patch != 0)
      fail("backbone stage: side ", h, "x", w, " not divisible by stride ", patch);
    auto s2d = geom::space_to_depth(h, w, patch, c);
    Var merged = element_gather_batched(images, s2d, static_cast<int64_t>(h) * w * c,
                                        {h / patch, w / patch, patch * patch * c});
    Var x = norm(reduce(merged));
    x = block1(x);
    x = block2(x);
    return x;
  }
};

/// Four-stage pyramid encoder shared by the remote image and the close-view
/// patches (they travel concatenated along the batch axis).
struct Backbone {
  std::vector<BackboneStage> stages;

  Backbone() = default;
  Backbone(ParamRegistry& reg, const std::string& name, const ModelConfig& cfg, Rng& rng) {
    stages.emplace_back(reg, name + ".stage1", 3, cfg.stage_channels[0], 4, cfg.heads,
                        cfg.win_size, rng);
    for (int i = 1; i < 4; ++i)
      stages.emplace_back(reg, name + ".stage" + std::to_string(i + 1), cfg.stage_channels[i - 1],
                          cfg.stage_channels[i], 2, cfg.heads, cfg.win_size, rng);
  }

  Var encode_stage(int stage_index, const Var& x) const {
    require(stage_index >= 1 && stage_index <= 4, "encode_stage: stage index in 1..4");
    return stages[static_cast<size_t>(stage_index - 1)](x);
  }
};

}  // namespace crossview
