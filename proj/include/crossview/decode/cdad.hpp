#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/data/raster.hpp"

namespace crossview {

/// Geometry of the dilated attention over the stage-4 feature: slice layout
/// and the row offsets d_j = floor(H_adjust / 2^(J-j)).
struct DilationSpec {
  int slice_size = 0;
  int density = 0;
  int n_slice = 0;
  int h_adjust = 0;
  std::vector<int> offsets;

  static DilationSpec make(int h4, int slice_size, int density) {
    require(h4 >= 1 && slice_size >= 1 && density >= 1, "make_dilation_spec: positive args");
    DilationSpec s;
    s.slice_size = slice_size;
    s.density = density;
    s.n_slice = (h4 + slice_size - 1) / slice_size;
    s.h_adjust = s.n_slice * slice_size;
    for (int j = 0; j < density; ++j)
      s.offsets.push_back(s.h_adjust / (1 << (density - j)));
    return s;
  }

  int bank_width() const { return (2 * density + 1) * slice_size; }
};

inline DilationSpec make_dilation_spec(int h4, int slice_size, int density) {
  return DilationSpec::make(h4, slice_size, density);
}

/// Builds the dilated key bank from a vertically padded map [3*Ha, Ha, C]:
/// the unshifted block plus +-d_j shifted blocks, concatenated along the
/// slice-width axis -> [Ha, n_slice, (2J+1)*S, C]. Rows shifted out of range
/// read the zero padding.
inline Var expand_keys(const Var& k_padded, const DilationSpec& spec) {
  require(k_padded->value.rank() == 3, "expand_keys: expected [3*Ha, Ha, C]");
  int ha = spec.h_adjust;
  require(k_padded->value.dim(0) == 3 * ha && k_padded->value.dim(1) == ha,
          "expand_keys: padded shape mismatch");
  int c = k_padded->value.dim(2);
  auto m = geom::dilated_bank(ha, spec.n_slice, spec.slice_size, spec.offsets, c);
  return element_gather(k_padded, m, {ha, spec.n_slice, spec.bank_width(), c});
}

/// Normalized coordinate grid (x, y in [-1, 1]) for the positional tensor.
inline Tensor coordinate_grid(int side) {
  Tensor t({side, side, 2});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      t.at3(y, x, 0) = side == 1 ? 0.0 : 2.0 * x / (side - 1) - 1.0;
      t.at3(y, x, 1) = side == 1 ? 0.0 : 2.0 * y / (side - 1) - 1.0;
    }
  return t;
}

/// Strided patchification of an upsampled close-view map: sub (n1, n2) takes
/// pixels (n1::n, n2::n); regroup is the exact inverse interleave.
inline Var patchify_close_query(const Var& x, int n) {
  require(x->value.rank() == 3, "patchify_close_query: expected [H,W,C]");
  int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (h % n != 0 || w % n != 0) fail("patchify: side ", h, "x", w, " not divisible by ", n);
  return element_gather(x, geom::patchify_strided(h, w, n, c), {n * n, h / n, w / n, c});
}

inline Var regroup_close_query(const Var& subs, int n) {
  require(subs->value.rank() == 4, "regroup_close_query: expected [n*n,h,w,C]");
  int th = subs->value.dim(1), tw = subs->value.dim(2), c = subs->value.dim(3);
  return element_gather(subs, geom::regroup_strided(th * n, tw * n, n, c), {th * n, tw * n, c});
}

/// One directional dilated-attention pass (row-wise). The transposed pass is
/// a second instance applied to spatially transposed tensors.
struct CdaPass {
  Conv1x1 conv_q, conv_k, conv_v, p_proj, ffn;
  LayerNorm ln;
  int dim = 0;

  CdaPass() = default;
  CdaPass(ParamRegistry& reg, const std::string& name, int c, Rng& rng)
      : conv_q(reg, name + ".q", c, c, rng),
        conv_k(reg, name + ".k", c, c, rng),
        conv_v(reg, name + ".v", c, c, rng),
        p_proj(reg, name + ".pos", 2, c, rng),
        ffn(reg, name + ".ffn", c, c, rng),
        ln(reg, name + ".ln", c),
        dim(c) {}

  struct Bank {
    Var keys, values;  // [Ha, n_slice, bank_width, C]
    Var pos;           // [Ha, Ha, C]
  };

  /// Key/value banks from the joint feature; computed once and shared by the
  /// remote query and every close-view query.
  Bank prepare(const Var& joint, const DilationSpec& spec) const {
    int ha = spec.h_adjust;
    int c = joint->value.dim(2);
    Bank b;
    b.pos = p_proj(constant(coordinate_grid(ha)));
    auto pad = geom::pad_rows(ha, ha, c, ha, ha);
    Var k_full = conv_k(add(joint, b.pos));
    Var v_full = conv_v(joint);
    b.keys = expand_keys(element_gather(k_full, pad, {3 * ha, ha, c}), spec);
    b.values = expand_keys(element_gather(v_full, pad, {3 * ha, ha, c}), spec);
    return b;
  }

  /// Row enhancement: every query row of a slice attends over its dilated
  /// key bank; residual + LayerNorm'd FFN keeps the geometry.
  Var enhance(const Var& query_feat, const Bank& bank, const DilationSpec& spec) const {
    int ha = spec.h_adjust;
    require(query_feat->value.dim(0) == ha && query_feat->value.dim(1) == ha,
            "cda_enhance: query must be H_adjust x H_adjust");
    int c = query_feat->value.dim(2);
    int rows = ha * spec.n_slice;
    Var q = conv_q(add(query_feat, bank.pos));
    Var q4 = reshape(q, {rows, spec.slice_size, c});
    Var k4 = reshape(bank.keys, {rows, spec.bank_width(), c});
    Var v4 = reshape(bank.values, {rows, spec.bank_width(), c});
    Var scores = scale(bmm(q4, transpose_last2(k4)), 1.0 / std::sqrt(static_cast<double>(c)));
    Var attended = bmm(softmax_lastdim(scores), v4);
    Var recovered = reshape(attended, {ha, ha, c});
    return add(query_feat, ln(ffn(recovered)));
  }
};

/// Vertical pass followed by a dimension-transposed pass with its own
/// parameters; the second pass consumes the first's output.
struct CdaOperator {
  CdaPass vertical, transposed;

  CdaOperator() = default;
  CdaOperator(ParamRegistry& reg, const std::string& name, int c, Rng& rng)
      : vertical(reg, name + ".vert", c, rng), transposed(reg, name + ".trans", c, rng) {}

  struct Banks {
    CdaPass::Bank vert, trans;
  };

  Banks prepare(const Var& joint, const DilationSpec& spec) const {
    Banks b;
    b.vert = vertical.prepare(joint, spec);
    b.trans = transposed.prepare(transpose_spatial(joint), spec);
    return b;
  }

  Var enhance(const Var& query, const Banks& banks, const DilationSpec& spec) const {
    Var e1 = vertical.enhance(query, banks.vert, spec);
    Var e2 = transposed.enhance(transpose_spatial(e1), banks.trans, spec);
    return transpose_spatial(e2);
  }
};

enum class DecoderTruncate { none, d4, d4d3, d4d3d2 };

/// Per-stage cross-modal features entering the decoder: the remote branch
/// plus the close-view patches (either may be absent in single-view modes).
struct StageFeatures {
  Var remote;
  std::vector<Var> close;
};

struct DecoderOutput {
  Var pred;                 // [sup, sup, 2], channel softmax
  std::vector<Var> stages;  // D_1 .. D_last (batched [B,s,s,ch])
};

/// Multiscale decoder: dilated-attention enhancement of the joint stage-4
/// feature, CBR fusion with earlier-stage features, persistent D_1 skip, and
/// a two-channel prediction head at supervision resolution.
struct Decoder {
  struct Cbr {
    Conv3x3 conv;
    BatchNorm bn;
    Cbr() = default;
    Cbr(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng, bool track_stats)
        : conv(reg, name + ".conv", in, out, rng), bn(reg, name + ".bn", out, track_stats) {}
    Var operator()(const Var& x, bool training) const { return relu(bn(conv(x), training)); }
  };

  Conv1x1 fuse;  // joint = fuse(cat(remote, close)) back to C4
  CdaOperator cda;
  std::vector<Cbr> inner, outer;  // I_i and D_i blocks for active steps
  Conv1x1 head;
  ModelConfig cfg;
  DilationSpec spec;
  DecoderTruncate truncate = DecoderTruncate::none;
  bool cda_enabled = true;
  bool skip_enabled = true;

  Decoder() = default;
  Decoder(ParamRegistry& reg, const std::string& name, const ModelConfig& model_cfg, Rng& rng,
          DecoderTruncate trunc = DecoderTruncate::none, bool with_cda = true,
          bool with_skip = true)
      : fuse(reg, name + ".fuse", 2 * model_cfg.stage_channels[3], model_cfg.stage_channels[3],
             rng),
        cfg(model_cfg),
        spec(DilationSpec::make(model_cfg.stage_side(4), model_cfg.slice_size,
                                model_cfg.dilation_density)),
        truncate(trunc),
        cda_enabled(with_cda),
        skip_enabled(with_skip) {
    int c4 = cfg.stage_channels[3];
    int cmp = cfg.cmp();
    if (cda_enabled) cda = CdaOperator(reg, name + ".cda", c4, rng);
    int steps = active_steps();
    for (int i = 2; i <= 1 + steps; ++i) {
      int prev_ch = i == 2 ? c4 : cmp;
      int stage_ch = cfg.stage_channels[4 - i];  // stage 5-i, zero-based
      inner.emplace_back(reg, name + ".i" + std::to_string(i), prev_ch + stage_ch, cmp, rng,
                         cfg.bn_track_stats);
      int d_in = skip_enabled ? cmp + c4 : cmp;
      outer.emplace_back(reg, name + ".d" + std::to_string(i), d_in, cmp, rng,
                         cfg.bn_track_stats);
    }
    int head_ch = steps == 0 ? c4 : cmp;
    head = Conv1x1(reg, name + ".head", 2 * head_ch, 2, rng);
  }

  int active_steps() const {
    switch (truncate) {
      case DecoderTruncate::none: return 3;
      case DecoderTruncate::d4: return 2;
      case DecoderTruncate::d4d3: return 1;
      case DecoderTruncate::d4d3d2: return 0;
    }
    return 3;
  }

  /// Channel concat + 1x1 conv of the (resized) remote and assembled close
  /// stage-4 features back to C4.
  Var fuse_joint(const Var& remote_at_adjust, const Var& close_at_adjust) const {
    require(remote_at_adjust->value.same_shape(close_at_adjust->value),
            "fuse_joint: branch shapes must match");
    return fuse(concat_lastdim(remote_at_adjust, close_at_adjust));
  }

  DecoderOutput forward(const std::array<StageFeatures, 4>& feats, bool training) const {
    const StageFeatures& s4 = feats[3];
    bool has_remote = static_cast<bool>(s4.remote);
    bool has_close = !s4.close.empty();
    require(has_remote || has_close, "decoder: at least one view required");
    int ha = spec.h_adjust;
    int n = cfg.n_view;

    // joint feature at H_adjust; a disabled branch contributes zeros
    Var remote_up, close_down, close_full;
    if (has_remote) remote_up = resize_bilinear(s4.remote, ha, ha);
    if (has_close) {
      close_full = assemble_grid(stack0(s4.close));
      close_down = resize_bilinear(close_full, ha, ha);
    }
    Var zero_branch = constant(Tensor::zeros({ha, ha, cfg.stage_channels[3]}));
    Var joint = fuse_joint(has_remote ? remote_up : zero_branch,
                           has_close ? close_down : zero_branch);

    CdaOperator::Banks banks;
    if (cda_enabled) banks = cda.prepare(joint, spec);

    std::vector<Var> d1_parts;
    if (has_remote)
      d1_parts.push_back(cda_enabled ? cda.enhance(remote_up, banks, spec) : remote_up);
    if (has_close) {
      Var close_up = resize_bilinear(close_full, n * ha, n * ha);
      Var subs = patchify_close_query(close_up, n);
      std::vector<Var> enhanced;
      for (int i = 0; i < n * n; ++i) {
        Var q = slice0(subs, i);
        enhanced.push_back(cda_enabled ? cda.enhance(q, banks, spec) : q);
      }
      Var regrouped = regroup_close_query(stack0(enhanced), n);
      Var view_tiles = split_grid(regrouped, n);
      for (int i = 0; i < n * n; ++i) d1_parts.push_back(slice0(view_tiles, i));
    }

    DecoderOutput out;
    Var d1 = stack0(d1_parts);
    out.stages.push_back(d1);
    Var d_prev = d1;
    int steps = active_steps();
    for (int step = 0; step < steps; ++step) {
      int i = step + 2;
      int side = cfg.stage_side(5 - i);
      const StageFeatures& sf = feats[static_cast<size_t>(4 - i)];
      std::vector<Var> stage_parts;
      if (has_remote) stage_parts.push_back(sf.remote);
      for (const Var& p : sf.close) stage_parts.push_back(p);
      Var stage_feat = resize_bilinear_batched(stack0(stage_parts), side, side);
      Var up_prev = resize_bilinear_batched(d_prev, side, side);
      Var inner_f = inner[static_cast<size_t>(step)](concat_lastdim(up_prev, stage_feat), training);
      Var d_i;
      if (skip_enabled) {
        Var up_d1 = resize_bilinear_batched(d1, side, side);
        d_i = outer[static_cast<size_t>(step)](concat_lastdim(inner_f, up_d1), training);
      } else {
        d_i = outer[static_cast<size_t>(step)](inner_f, training);
      }
      out.stages.push_back(d_i);
      d_prev = d_i;
    }

    // head: remote part upsampled to pair with the spliced close part, 1x1
    // conv to two channels, upsample to supervision resolution, softmax
    Var d_last = d_prev;
    int side = d_last->value.dim(1);
    int bi = 0;
    Var remote_part, close_part;
    if (has_remote) remote_part = resize_bilinear(slice0(d_last, bi++), n * side, n * side);
    if (has_close) {
      std::vector<Var> tiles;
      for (int i = 0; i < n * n; ++i) tiles.push_back(slice0(d_last, bi++));
      close_part = assemble_grid(stack0(tiles));
    }
    Var zero_head = constant(Tensor::zeros({n * side, n * side, d_last->value.dim(3)}));
    Var cat = concat_lastdim(has_remote ? remote_part : zero_head,
                             has_close ? close_part : zero_head);
    Var logits = head(cat);
    int sup = cfg.supervision_side();
    logits = resize_bilinear(logits, sup, sup);
    out.pred = softmax_lastdim(logits);
    return out;
  }
};

/// Binarize the foreground channel of a prediction map; ties go background.
inline Raster predict_mask_raster(const Tensor& pred, double threshold) {
  require(pred.rank() == 3 && pred.dim(2) == 2, "predict_mask: expected [H,W,2]");
  Raster mask(pred.dim(0), pred.dim(1), 1);
  for (int y = 0; y < pred.dim(0); ++y)
    for (int x = 0; x < pred.dim(1); ++x)
      mask.at(y, x) = pred.at3(y, x, 1) > threshold ? 1 : 0;
  return mask;
}

}  // namespace crossview
