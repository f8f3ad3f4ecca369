#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/text.hpp"

namespace crossview {

enum class ExchangeMode { bidirectional, remote2close, close2remote, none };

/// Windowed view of a feature: the map is resized so the requested number of
/// windows tiles it exactly, then split row-major.
struct WindowGrid {
  Var windows;       // [n_win^2, side, side, C]
  int n_win = 0;
  int window_side = 0;
  int resized_side = 0;
};

/// Bilinear-resizes F so n_win windows of window_side tile it, then splits.
inline WindowGrid partition_windows(const Var& f, int n_win, int window_side) {
  require(f->value.rank() == 3, "partition_windows: expected [H,W,C]");
  int c = f->value.dim(2);
  WindowGrid g;
  g.n_win = n_win;
  g.window_side = window_side;
  g.resized_side = n_win * window_side;
  Var resized = resize_bilinear(f, g.resized_side, g.resized_side);
  auto m = geom::window_partition(g.resized_side, g.resized_side, window_side, c);
  g.windows = element_gather(resized, m, {n_win * n_win, window_side, window_side, c});
  return g;
}

/// Exact inverse grouping of partition_windows (on the resized feature).
inline Var merge_windows(const Var& windows, int n_win, int window_side) {
  int c = windows->value.dim(3);
  int side = n_win * window_side;
  auto m = geom::window_merge(side, side, window_side, c);
  return element_gather(windows, m, {side, side, c});
}

/// Per-window cross attention: queries from q_grid, keys/values from
/// kv_grid, softmax over the paired window's tokens, scaled by sqrt(C).
/// Output is merged back to the query grid's resized geometry.
inline Var window_cross_attention(const WindowGrid& q_grid, const WindowGrid& kv_grid,
                                  const Conv1x1* q_proj = nullptr,
                                  const Conv1x1* k_proj = nullptr,
                                  const Conv1x1* v_proj = nullptr) {
  require(q_grid.n_win == kv_grid.n_win, "window grids must pair one-to-one");
  int nw = q_grid.n_win * q_grid.n_win;
  int tq = q_grid.window_side * q_grid.window_side;
  int tk = kv_grid.window_side * kv_grid.window_side;
  int c = q_grid.windows->value.dim(3);
  Var q = reshape(q_grid.windows, {nw, tq, c});
  Var kv = reshape(kv_grid.windows, {nw, tk, c});
  Var k = kv, v = kv;
  if (q_proj) q = (*q_proj)(q);
  if (k_proj) k = (*k_proj)(k);
  if (v_proj) v = (*v_proj)(v);
  Var scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(c)));
  Var out = bmm(softmax_lastdim(scores), v);
  Var spatial = reshape(out, {nw, q_grid.window_side, q_grid.window_side, c});
  return merge_windows(spatial, q_grid.n_win, q_grid.window_side);
}

/// Cross-view window attention for one encoder stage: language alignment and
/// gate fusion per view, then bidirectional detail/context exchange between
/// paired windows of the two views.
struct CVWinStage {
  Conv1x1 q_vis;
  Linear k_lang, v_lang;
  Conv1x1 gate_g, gate_f, gate_r;
  Conv1x1 integ_remote, integ_close;
  Conv1x1 exq_r, exk_c, exv_c, exq_c, exk_r, exv_r;  // optional exchange maps
  int dim = 0, heads = 1, win = 0, n_view = 1;
  bool use_proj = false;
  bool use_gate = true;

  CVWinStage() = default;
  CVWinStage(ParamRegistry& reg, const std::string& name, int stage_dim, const ModelConfig& cfg,
             Rng& rng, bool gated = true)
      : q_vis(reg, name + ".q_vis", stage_dim, stage_dim, rng),
        k_lang(reg, name + ".k_lang", cfg.lang_dim, stage_dim, rng),
        v_lang(reg, name + ".v_lang", cfg.lang_dim, stage_dim, rng),
        gate_g(reg, name + ".gate_g", 2 * stage_dim, stage_dim, rng),
        gate_f(reg, name + ".gate_f", 2 * stage_dim, stage_dim, rng),
        gate_r(reg, name + ".gate_r", stage_dim, stage_dim, rng),
        integ_remote(reg, name + ".integ_remote", 2 * stage_dim, stage_dim, rng),
        integ_close(reg, name + ".integ_close", 2 * stage_dim, stage_dim, rng),
        dim(stage_dim),
        heads(cfg.heads),
        win(cfg.win_size),
        n_view(cfg.n_view),
        use_proj(cfg.exchange_proj),
        use_gate(gated) {
    if (use_proj) {
      exq_r = Conv1x1(reg, name + ".exq_r", stage_dim, stage_dim, rng);
      exk_c = Conv1x1(reg, name + ".exk_c", stage_dim, stage_dim, rng);
      exv_c = Conv1x1(reg, name + ".exv_c", stage_dim, stage_dim, rng);
      exq_c = Conv1x1(reg, name + ".exq_c", stage_dim, stage_dim, rng);
      exk_r = Conv1x1(reg, name + ".exk_r", stage_dim, stage_dim, rng);
      exv_r = Conv1x1(reg, name + ".exv_r", stage_dim, stage_dim, rng);
    }
  }

  /// Vision tokens attend over language tokens; padded words are masked out
  /// of the softmax.
  Var align_language(const Var& v_feat, const Var& lang, const std::vector<uint8_t>& mask) const {
    int h = v_feat->value.dim(0), w = v_feat->value.dim(1);
    Var q = reshape(q_vis(v_feat), {1, h * w, dim});
    Var k = reshape(k_lang(lang), {1, lang->value.dim(0), dim});
    Var v = reshape(v_lang(lang), {1, lang->value.dim(0), dim});
    int hd = dim / heads;
    q = detail::split_heads(q, heads);
    k = detail::split_heads(k, heads);
    v = detail::split_heads(v, heads);
    Var scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    Var attn = softmax_lastdim(scores, &mask);
    Var out = detail::merge_heads(bmm(attn, v), heads, 1);
    return reshape(out, {h, w, dim});
  }

  /// Tanh-gated fusion of the aligned language feature with the vision
  /// feature, residual to the vision feature. With the gate disabled the
  /// modulation is a plain pass-through (ablation wiring).
  Var gate_fuse(const Var& aligned, const Var& v_feat) const {
    Var cat = concat_lastdim(aligned, v_feat);
    Var inner = gate_f(cat);
    if (use_gate) inner = mul(tanh_(gate_g(cat)), inner);
    return add(v_feat, gate_r(inner));
  }

  Var cross_modal(const Var& v_feat, const Var& lang, const std::vector<uint8_t>& mask) const {
    return gate_fuse(align_language(v_feat, lang, mask), v_feat);
  }

  int n_windows(int side) const { return (side + win - 1) / win; }

  /// Full stage forward. close_patches holds n_view^2 tiles of [H,W,C];
  /// outputs keep the input geometry for both branches.
  std::pair<Var, std::vector<Var>> forward(const Var& v_remote,
                                           const std::vector<Var>& close_patches, const Var& lang,
                                           const std::vector<uint8_t>& mask,
                                           ExchangeMode mode) const {
    int h = v_remote->value.dim(0);
    Var v_close = assemble_grid(stack0(close_patches));

    Var f_remote = cross_modal(v_remote, lang, mask);
    Var f_close = cross_modal(v_close, lang, mask);

    Var out_remote = f_remote;
    Var out_close = f_close;
    if (mode != ExchangeMode::none) {
      int nw = n_windows(h);
      WindowGrid remote_grid = partition_windows(f_remote, nw, win);
      WindowGrid close_grid = partition_windows(f_close, nw, n_view * win);
      if (mode == ExchangeMode::bidirectional || mode == ExchangeMode::close2remote) {
        Var detail_in = window_cross_attention(remote_grid, close_grid,
                                               use_proj ? &exq_r : nullptr,
                                               use_proj ? &exk_c : nullptr,
                                               use_proj ? &exv_c : nullptr);
        Var resized = resize_bilinear(f_remote, remote_grid.resized_side, remote_grid.resized_side);
        Var integ = add(resized, integ_remote(concat_lastdim(resized, detail_in)));
        out_remote = resize_bilinear(integ, h, h);
      }
      if (mode == ExchangeMode::bidirectional || mode == ExchangeMode::remote2close) {
        Var context_in = window_cross_attention(close_grid, remote_grid,
                                                use_proj ? &exq_c : nullptr,
                                                use_proj ? &exk_r : nullptr,
                                                use_proj ? &exv_r : nullptr);
        Var resized = resize_bilinear(f_close, close_grid.resized_side, close_grid.resized_side);
        Var integ = add(resized, integ_close(concat_lastdim(resized, context_in)));
        out_close = resize_bilinear(integ, n_view * h, n_view * h);
      }
    }

    std::vector<Var> close_out;
    Var tiles = split_grid(out_close, n_view);
    for (int i = 0; i < n_view * n_view; ++i) close_out.push_back(slice0(tiles, i));
    return {out_remote, close_out};
  }

  /// Single-view reduction used by the only_remote / only_close wirings:
  /// language alignment and gating without an exchange partner.
  Var forward_single(const Var& v_feat, const Var& lang, const std::vector<uint8_t>& mask) const {
    return cross_modal(v_feat, lang, mask);
  }
};

}  // namespace crossview
