#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crossview/core/gradcheck.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/eval/evaluate.hpp"
#include "crossview/model.hpp"
#include "crossview/train/loss.hpp"
#include "crossview/vision/backbone.hpp"
#include "crossview/vision/cvwin.hpp"

namespace crossview {

struct GradSuiteEntry {
  std::string name;
  double rel_err = 0.0;
  double tolerance = 1e-5;
  std::string worst_param;
  bool pass() const { return rel_err < tolerance; }
};

/// Central-difference verification of every differentiable operation at toy
/// dims, plus the full model on a 32x32 input. Deterministic in the seed.
inline std::vector<GradSuiteEntry> run_gradcheck_suite(uint64_t seed,
                                                       const std::string& only = "") {
  std::vector<GradSuiteEntry> results;
  auto want = [&](const std::string& name) { return only.empty() || only == name || only == "all"; };
  auto record = [&](const std::string& name, const GradCheckReport& rep, double tol) {
    GradSuiteEntry e;
    e.name = name;
    e.rel_err = rep.max_rel_err;
    e.tolerance = tol;
    e.worst_param = rep.worst_param;
    results.push_back(e);
  };

  if (want("text-encoder")) {
    ModelConfig cfg;
    cfg.lang_dim = 8;
    cfg.lang_len = 6;
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 1));
    Vocab vocab = Vocab::builtin();
    TextEncoder enc(reg, "text", vocab, cfg, rng);
    TokenSeq t = tokenize("the tiny red circle", vocab, cfg.lang_len);
    Tensor w = rng.uniform_tensor({cfg.lang_len, cfg.lang_dim}, -1, 1);
    record("text-encoder",
           gradcheck_registry(reg, [&] { return dot_const(enc(t), w); }, 1e-5, 1, 30), 1e-5);
  }

  if (want("backbone")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 2));
    BackboneStage stage(reg, "s", 3, 4, 4, 1, 4, rng);
    Var x = reg.param("x", rng.uniform_tensor({1, 8, 8, 3}, -1, 1));
    Tensor w = rng.uniform_tensor({1, 2, 2, 4}, -1, 1);
    record("backbone",
           gradcheck_registry(reg, [&] { return dot_const(stage(x), w); }, 1e-5, 1, 20), 1e-5);
  }

  ModelConfig cvc;
  cvc.stage_channels = {6, 7, 8, 9};
  cvc.lang_dim = 6;
  cvc.lang_len = 3;
  cvc.win_size = 2;
  cvc.n_view = 2;
  std::vector<uint8_t> mask3 = {1, 1, 0};

  if (want("align_language")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 3));
    CVWinStage st(reg, "cv", 6, cvc, rng);
    Var v = reg.param("x_v", rng.uniform_tensor({3, 3, 6}, -1, 1));
    Var lang = reg.param("x_lang", rng.uniform_tensor({3, 6}, -1, 1));
    Tensor w = rng.uniform_tensor({3, 3, 6}, -1, 1);
    record("align_language",
           gradcheck_registry(
               reg, [&] { return dot_const(st.align_language(v, lang, mask3), w); }, 1e-5, 1, 25),
           1e-5);
  }

  if (want("gate_fuse")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 4));
    CVWinStage st(reg, "cv", 6, cvc, rng);
    Var f = reg.param("x_f", rng.uniform_tensor({2, 2, 6}, -1, 1));
    Var v = reg.param("x_v", rng.uniform_tensor({2, 2, 6}, -1, 1));
    Tensor w = rng.uniform_tensor({2, 2, 6}, -1, 1);
    record("gate_fuse",
           gradcheck_registry(reg, [&] { return dot_const(st.gate_fuse(f, v), w); }, 1e-5, 1, 25),
           1e-5);
  }

  if (want("exchange")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 5));
    Var remote = reg.param("x_remote", rng.uniform_tensor({4, 4, 6}, -1, 1));
    Var close = reg.param("x_close", rng.uniform_tensor({8, 8, 6}, -1, 1));
    Tensor wr = rng.uniform_tensor({4, 4, 6}, -1, 1);
    Tensor wc = rng.uniform_tensor({8, 8, 6}, -1, 1);
    record("exchange", gradcheck_registry(reg,
                                          [&] {
                                            WindowGrid gr = partition_windows(remote, 2, 2);
                                            WindowGrid gc = partition_windows(close, 2, 4);
                                            Var c2r = window_cross_attention(gr, gc);
                                            Var r2c = window_cross_attention(gc, gr);
                                            return add(dot_const(c2r, wr), dot_const(r2c, wc));
                                          },
                                          1e-5, 1, 0),
           1e-5);
  }

  if (want("fuse_joint")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 6));
    Conv1x1 fuse(reg, "fuse", 12, 6, rng);
    Var a = reg.param("x_a", rng.uniform_tensor({3, 3, 6}, -1, 1));
    Var b = reg.param("x_b", rng.uniform_tensor({3, 3, 6}, -1, 1));
    Tensor w = rng.uniform_tensor({3, 3, 6}, -1, 1);
    record("fuse_joint",
           gradcheck_registry(
               reg, [&] { return dot_const(fuse(concat_lastdim(a, b)), w); }, 1e-5, 1, 30),
           1e-5);
  }

  if (want("cda")) {
    DilationSpec spec = make_dilation_spec(6, 3, 2);
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 7));
    CdaOperator cda(reg, "cda", 4, rng);
    Var query = reg.param("x_query", rng.uniform_tensor({6, 6, 4}, -1, 1));
    Var joint = reg.param("x_joint", rng.uniform_tensor({6, 6, 4}, -1, 1));
    Tensor w = rng.uniform_tensor({6, 6, 4}, -1, 1);
    record("cda", gradcheck_registry(reg,
                                     [&] {
                                       auto banks = cda.prepare(joint, spec);
                                       return dot_const(cda.enhance(query, banks, spec), w);
                                     },
                                     1e-5, 1, 10),
           1e-5);
  }

  if (want("decode")) {
    ModelConfig cfg;
    cfg.input_side = 32;
    cfg.n_view = 2;
    cfg.stage_channels = {4, 5, 6, 8};
    cfg.slice_size = 2;
    cfg.dilation_density = 2;
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 8));
    Decoder dec(reg, "dec", cfg, rng);
    std::array<StageFeatures, 4> feats;
    for (int i = 0; i < 4; ++i) {
      int side = cfg.stage_side(i + 1);
      int ch = cfg.stage_channels[static_cast<size_t>(i)];
      feats[static_cast<size_t>(i)].remote =
          reg.param("x_r" + std::to_string(i), rng.uniform_tensor({side, side, ch}, -1, 1));
      for (int p = 0; p < 4; ++p)
        feats[static_cast<size_t>(i)].close.push_back(reg.param(
            "x_c" + std::to_string(i) + "_" + std::to_string(p),
            rng.uniform_tensor({side, side, ch}, -1, 1)));
    }
    Raster gt(cfg.supervision_side(), cfg.supervision_side(), 1);
    for (int y = 10; y < 30; ++y)
      for (int x = 12; x < 36; ++x) gt.at(y, x) = 1;
    BnStatsFreeze freeze;
    record("decode", gradcheck_registry(reg,
                                        [&] {
                                          DecoderOutput out = dec.forward(feats, true);
                                          return total_loss(out.pred, gt, 0.9, 0.1).total;
                                        },
                                        1e-6, 1, 6),
           1e-5);
  }

  if (want("losses")) {
    ParamRegistry reg;
    Rng rng(mix_seed(seed, 9));
    Var logits = reg.param("x_logits", rng.uniform_tensor({4, 4, 2}, -1, 1));
    Raster gt(4, 4, 1);
    gt.at(0, 0) = 1;
    gt.at(2, 3) = 1;
    record("losses", gradcheck_registry(reg,
                                        [&] {
                                          Var pred = softmax_lastdim(logits);
                                          return total_loss(pred, gt, 0.9, 0.1).total;
                                        },
                                        1e-6, 1, 0),
           1e-5);
  }

  if (want("full")) {
    ModelConfig cfg;
    cfg.input_side = 32;
    cfg.n_view = 2;
    cfg.stage_channels = {4, 6, 8, 10};
    cfg.lang_dim = 8;
    cfg.lang_len = 6;
    cfg.slice_size = 3;
    cfg.dilation_density = 2;
    cfg.seed = seed;
    Model model(cfg);
    SynthSpec spec;
    spec.image_side = 64;
    spec.min_objects = 2;
    spec.max_objects = 3;
    spec.samples = 1;
    Dataset ds = make_synth_dataset(mix_seed(seed, 10), spec, cfg);
    BnStatsFreeze freeze;
    // eps sits below the truncation-error regime of this deep composition;
    // double precision keeps the rounding floor near 1e-10
    record("full", gradcheck_registry(model.reg,
                                      [&] {
                                        DecoderOutput out = model.forward(ds.bundles[0], true);
                                        return total_loss(out.pred, ds.bundles[0].mask_full, 0.9,
                                                          0.1)
                                            .total;
                                      },
                                      1e-6, 1, 2),
           1e-4);
  }

  require(!results.empty(), "gradcheck: unknown module '" + only + "'");
  return results;
}

}  // namespace crossview
