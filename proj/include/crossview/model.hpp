#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/text.hpp"
#include "crossview/vision/backbone.hpp"
#include "crossview/vision/cvwin.hpp"

namespace crossview {

enum class ViewMode { full, only_close, only_remote };
enum class CvwinVariant { cvwin, pwam_stub, iim_stub, direct_sum, no_gate };

struct AblationSwitches {
  ViewMode view_mode = ViewMode::full;
  ExchangeMode exchange_mode = ExchangeMode::bidirectional;
  CvwinVariant variant = CvwinVariant::cvwin;
  DecoderTruncate truncate = DecoderTruncate::none;
  bool cda_enabled = true;
  bool skip_enabled = true;
};

inline ViewMode parse_view_mode(const std::string& s) {
  if (s == "full") return ViewMode::full;
  if (s == "only_close") return ViewMode::only_close;
  if (s == "only_remote") return ViewMode::only_remote;
  fail("unknown view_mode: ", s);
}

inline ExchangeMode parse_exchange_mode(const std::string& s) {
  if (s == "bidirectional") return ExchangeMode::bidirectional;
  if (s == "remote2close") return ExchangeMode::remote2close;
  if (s == "close2remote") return ExchangeMode::close2remote;
  if (s == "none") return ExchangeMode::none;
  fail("unknown exchange_mode: ", s);
}

inline CvwinVariant parse_cvwin_variant(const std::string& s) {
  if (s == "cvwin") return CvwinVariant::cvwin;
  if (s == "pwam_stub") return CvwinVariant::pwam_stub;
  if (s == "iim_stub") return CvwinVariant::iim_stub;
  if (s == "direct_sum") return CvwinVariant::direct_sum;
  if (s == "no_gate") return CvwinVariant::no_gate;
  fail("unknown cvwin_variant: ", s);
}

inline DecoderTruncate parse_decoder_truncate(const std::string& s) {
  if (s == "none") return DecoderTruncate::none;
  if (s == "d4") return DecoderTruncate::d4;
  if (s == "d4d3") return DecoderTruncate::d4d3;
  if (s == "d4d3d2") return DecoderTruncate::d4d3d2;
  fail("unknown decoder_truncate: ", s);
}

/// Simplified per-stage fusion stand-ins for the harness ablations. The
/// pooled-broadcast stub adds a projected sentence vector everywhere; the
/// concat stub fuses a dense language alignment without gate or exchange.
struct PooledBroadcastStub {
  Linear lang_proj;
  Conv1x1 ffn;

  PooledBroadcastStub() = default;
  PooledBroadcastStub(ParamRegistry& reg, const std::string& name, int dim,
                      const ModelConfig& cfg, Rng& rng)
      : lang_proj(reg, name + ".lang_proj", cfg.lang_dim, dim, rng),
        ffn(reg, name + ".ffn", 2 * dim, dim, rng) {}

  Var operator()(const Var& v_feat, const Var& lang, const std::vector<uint8_t>& mask) const {
    int h = v_feat->value.dim(0), w = v_feat->value.dim(1);
    int l = lang->value.dim(0);
    int real = 0;
    for (uint8_t m : mask) real += m ? 1 : 0;
    // padded rows are exactly zero, so a plain row sum pools real tokens
    Tensor ones({1, l});
    ones.fill(1.0 / std::max(real, 1));
    Var pooled = lang_proj(matmul(constant(ones), lang));  // [1, dim]
    Tensor bcast({h * w, 1});
    bcast.fill(1.0);
    Var tiled = reshape(matmul(constant(bcast), pooled), {h, w, lang_proj.out});
    return add(v_feat, ffn(concat_lastdim(v_feat, tiled)));
  }
};

struct ConcatFusionStub {
  Conv1x1 q_vis;
  Linear k_lang, v_lang;
  Conv1x1 ffn;
  int dim = 0;

  ConcatFusionStub() = default;
  ConcatFusionStub(ParamRegistry& reg, const std::string& name, int d, const ModelConfig& cfg,
                   Rng& rng)
      : q_vis(reg, name + ".q_vis", d, d, rng),
        k_lang(reg, name + ".k_lang", cfg.lang_dim, d, rng),
        v_lang(reg, name + ".v_lang", cfg.lang_dim, d, rng),
        ffn(reg, name + ".ffn", 2 * d, d, rng),
        dim(d) {}

  Var operator()(const Var& v_feat, const Var& lang, const std::vector<uint8_t>& mask) const {
    int h = v_feat->value.dim(0), w = v_feat->value.dim(1);
    Var q = reshape(q_vis(v_feat), {h * w, dim});
    Var k = k_lang(lang);
    Var v = v_lang(lang);
    Var scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dim)));
    Var aligned = reshape(matmul(softmax_lastdim(scores, &mask), v), {h, w, dim});
    return ffn(concat_lastdim(v_feat, aligned));
  }
};

/// The full segmentation network: shared pyramid encoder over the
/// batch-concatenated [remote; close patches] images, per-stage cross-view
/// window attention, and the dilated-attention decoder.
struct Model {
  ModelConfig cfg;
  AblationSwitches ab;
  Vocab vocab;
  ParamRegistry reg;
  TextEncoder text;
  Backbone backbone;
  std::vector<CVWinStage> cvwin;
  std::vector<PooledBroadcastStub> pwam;
  std::vector<ConcatFusionStub> iim;
  Decoder decoder;

  explicit Model(const ModelConfig& model_cfg, Vocab vocabulary = Vocab::builtin(),
                 AblationSwitches switches = {})
      : cfg(model_cfg), ab(switches), vocab(std::move(vocabulary)) {
    auto violations = validate_config(cfg);
    if (!violations.empty()) fail("invalid model config: ", violations.front());
    Rng rng(mix_seed(cfg.seed, 0x90de1));
    text = TextEncoder(reg, "text", vocab, cfg, rng);
    backbone = Backbone(reg, "backbone", cfg, rng);
    for (int i = 0; i < 4; ++i) {
      int dim = cfg.stage_channels[static_cast<size_t>(i)];
      std::string name = "cvwin" + std::to_string(i + 1);
      switch (ab.variant) {
        case CvwinVariant::cvwin:
          cvwin.emplace_back(reg, name, dim, cfg, rng, true);
          break;
        case CvwinVariant::no_gate:
          cvwin.emplace_back(reg, name, dim, cfg, rng, false);
          break;
        case CvwinVariant::pwam_stub:
          pwam.emplace_back(reg, name + ".pwam", dim, cfg, rng);
          break;
        case CvwinVariant::iim_stub:
          iim.emplace_back(reg, name + ".iim", dim, cfg, rng);
          break;
        case CvwinVariant::direct_sum:
          break;
      }
    }
    decoder = Decoder(reg, "decoder", cfg, rng, ab.truncate, ab.cda_enabled, ab.skip_enabled);
  }

  bool has_remote() const { return ab.view_mode != ViewMode::only_close; }
  bool has_close() const { return ab.view_mode != ViewMode::only_remote; }
  bool needs_language() const { return ab.variant != CvwinVariant::direct_sum; }

  /// Applies the configured per-stage fusion to the split views and returns
  /// the features both for the next encoder stage and for the decoder.
  StageFeatures apply_stage_fusion(int stage_idx, const Var& remote,
                                   const std::vector<Var>& close, const Var& lang,
                                   const std::vector<uint8_t>& mask) const {
    StageFeatures out;
    switch (ab.variant) {
      case CvwinVariant::cvwin:
      case CvwinVariant::no_gate: {
        const CVWinStage& stage = cvwin[static_cast<size_t>(stage_idx)];
        if (has_remote() && has_close()) {
          auto [r, c] = stage.forward(remote, close, lang, mask, ab.exchange_mode);
          out.remote = r;
          out.close = c;
        } else if (has_remote()) {
          out.remote = stage.forward_single(remote, lang, mask);
        } else {
          Var fused = stage.forward_single(assemble_grid(stack0(close)), lang, mask);
          Var tiles = split_grid(fused, cfg.n_view);
          for (int i = 0; i < cfg.n_view * cfg.n_view; ++i) out.close.push_back(slice0(tiles, i));
        }
        break;
      }
      case CvwinVariant::pwam_stub:
      case CvwinVariant::iim_stub: {
        auto fuse_one = [&](const Var& v) {
          return ab.variant == CvwinVariant::pwam_stub
                     ? pwam[static_cast<size_t>(stage_idx)](v, lang, mask)
                     : iim[static_cast<size_t>(stage_idx)](v, lang, mask);
        };
        if (has_remote()) out.remote = fuse_one(remote);
        if (has_close()) {
          Var fused = fuse_one(assemble_grid(stack0(close)));
          Var tiles = split_grid(fused, cfg.n_view);
          for (int i = 0; i < cfg.n_view * cfg.n_view; ++i) out.close.push_back(slice0(tiles, i));
        }
        break;
      }
      case CvwinVariant::direct_sum: {
        if (has_remote()) out.remote = remote;
        if (has_close()) out.close = close;
        break;
      }
    }
    return out;
  }

  /// Forward pass to the two-channel prediction map at supervision
  /// resolution. `training` switches batch-norm statistics.
  DecoderOutput forward(const ViewBundle& bundle, bool training) const {
    require(static_cast<int>(bundle.close.size()) == cfg.n_view * cfg.n_view,
            "forward: bundle close patch count mismatch");
    Var lang;
    std::vector<uint8_t> mask(static_cast<size_t>(cfg.lang_len), 1);
    if (needs_language()) {
      TokenSeq tokens = tokenize(bundle.expression, vocab, cfg.lang_len);
      lang = text(tokens);
      mask = tokens.mask;
    }

    std::vector<Var> images;
    if (has_remote()) images.push_back(constant(bundle.remote));
    if (has_close())
      for (const Tensor& t : bundle.close) images.push_back(constant(t));
    Var x = stack0(images);

    std::array<StageFeatures, 4> feats;
    for (int i = 0; i < 4; ++i) {
      x = backbone.encode_stage(i + 1, x);
      int bi = 0;
      Var remote;
      std::vector<Var> close;
      if (has_remote()) remote = slice0(x, bi++);
      if (has_close())
        for (int p = 0; p < cfg.n_view * cfg.n_view; ++p) close.push_back(slice0(x, bi++));
      feats[static_cast<size_t>(i)] = apply_stage_fusion(i, remote, close, lang, mask);
      std::vector<Var> next;
      if (feats[static_cast<size_t>(i)].remote) next.push_back(feats[static_cast<size_t>(i)].remote);
      for (const Var& p : feats[static_cast<size_t>(i)].close) next.push_back(p);
      x = stack0(next);
    }
    return decoder.forward(feats, training);
  }

  int64_t param_count() const { return reg.param_count(); }
};

}  // namespace crossview
