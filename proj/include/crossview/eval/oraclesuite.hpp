#pragma once

#include <string>

#include "crossview/oracle/naive.hpp"
#include "crossview/vision/cvwin.hpp"

namespace crossview {

struct OracleResult {
  std::string which;
  int trials = 0;
  double max_deviation = 0.0;
  double tolerance = 1e-6;
  bool pass() const { return max_deviation < tolerance; }
};

/// Compares the windowed cross-view exchange (both directions) against dense
/// attention under a block-diagonal window mask on random toy tensors.
inline OracleResult run_window_attention_oracle(int trials, uint64_t seed) {
  OracleResult res;
  res.which = "window_attn";
  res.trials = trials;
  Rng rng(mix_seed(seed, 0xa11));
  NoGradGuard ng;
  for (int t = 0; t < trials; ++t) {
    int n_win = static_cast<int>(rng.integer(1, 3));
    int s = static_cast<int>(rng.integer(1, 3));
    int n_view = static_cast<int>(rng.integer(1, 3));
    int c = static_cast<int>(rng.integer(2, 8));
    int rs = n_win * s, cs = n_win * n_view * s;
    Tensor remote = rng.uniform_tensor({rs, rs, c}, -1, 1);
    Tensor close = rng.uniform_tensor({cs, cs, c}, -1, 1);
    WindowGrid gr = partition_windows(constant(remote), n_win, s);
    WindowGrid gc = partition_windows(constant(close), n_win, n_view * s);
    double d1 = max_abs_diff(window_cross_attention(gr, gc)->value,
                             oracle::window_exchange(remote, close, n_win, s, n_view * s));
    double d2 = max_abs_diff(window_cross_attention(gc, gr)->value,
                             oracle::window_exchange(close, remote, n_win, n_view * s, s));
    res.max_deviation = std::max({res.max_deviation, d1, d2});
  }
  return res;
}

/// Compares the dilated-attention operator (vertical and transposed passes,
/// shared key/value banks, non-divisible H4 geometries) against explicit
/// gather-then-dense attention.
inline OracleResult run_cda_oracle(int trials, uint64_t seed) {
  OracleResult res;
  res.which = "cda";
  res.trials = trials;
  Rng rng(mix_seed(seed, 0xcda));
  NoGradGuard ng;
  for (int t = 0; t < trials; ++t) {
    int h4 = static_cast<int>(rng.integer(2, 9));
    int s = static_cast<int>(rng.integer(2, 4));
    int j = static_cast<int>(rng.integer(1, 3));
    int c = static_cast<int>(rng.integer(2, 6));
    DilationSpec spec = make_dilation_spec(h4, s, j);
    int ha = spec.h_adjust;

    ParamRegistry reg;
    Rng prng(mix_seed(seed, 7000 + static_cast<uint64_t>(t)));
    CdaOperator cda(reg, "cda", c, prng);

    Tensor query = resize_bilinear(constant(rng.uniform_tensor({h4, h4, c}, -1, 1)), ha, ha)->value;
    Tensor joint = resize_bilinear(constant(rng.uniform_tensor({h4, h4, c}, -1, 1)), ha, ha)->value;

    oracle::CdaPassParams vp, tp;
    auto fill = [](const CdaPass& p, oracle::CdaPassParams& out) {
      out.qw = p.conv_q.w->value;
      out.qb = p.conv_q.b->value;
      out.kw = p.conv_k.w->value;
      out.kb = p.conv_k.b->value;
      out.vw = p.conv_v.w->value;
      out.vb = p.conv_v.b->value;
      out.pw = p.p_proj.w->value;
      out.pb = p.p_proj.b->value;
      out.fw = p.ffn.w->value;
      out.fb = p.ffn.b->value;
      out.ln_gain = p.ln.gain->value;
      out.ln_bias = p.ln.bias->value;
    };
    fill(cda.vertical, vp);
    fill(cda.transposed, tp);

    auto banks = cda.prepare(constant(joint), spec);
    Tensor got = cda.enhance(constant(query), banks, spec)->value;
    Tensor expect = oracle::cda_enhance(query, joint, spec, vp, tp);
    res.max_deviation = std::max(res.max_deviation, max_abs_diff(got, expect));
  }
  return res;
}

/// Compares the metric pipeline against per-pixel double loops; counts must
/// agree exactly, ratios to 1e-12.
inline OracleResult run_metrics_oracle(int trials, uint64_t seed) {
  OracleResult res;
  res.which = "metrics";
  res.trials = trials;
  res.tolerance = 1e-12;
  Rng rng(mix_seed(seed, 0x3e7));
  std::vector<EvalRecord> fast, slow;
  for (int t = 0; t < trials; ++t) {
    int h = static_cast<int>(rng.integer(1, 16));
    int w = static_cast<int>(rng.integer(1, 16));
    Raster a(h, w, 1), b(h, w, 1);
    for (auto& v : a.pix) v = rng.integer(0, 3) == 0 ? 1 : 0;
    for (auto& v : b.pix) v = rng.integer(0, 3) == 0 ? 1 : 0;
    EvalRecord f = iou(a, b);
    EvalRecord s = oracle::iou(a, b);
    if (f.intersection != s.intersection || f.union_count != s.union_count)
      res.max_deviation = 1.0;
    res.max_deviation = std::max(res.max_deviation, std::abs(f.iou - s.iou));
    fast.push_back(f);
    slow.push_back(s);
  }
  res.max_deviation = std::max(res.max_deviation, std::abs(oiou(fast) - oiou(slow)));
  res.max_deviation = std::max(res.max_deviation, std::abs(miou(fast) - miou(slow)));
  for (double t : precision_thresholds())
    res.max_deviation =
        std::max(res.max_deviation, std::abs(precision_at(fast, t) - precision_at(slow, t)));
  return res;
}

inline OracleResult run_oracle(const std::string& which, int trials, uint64_t seed) {
  if (which == "window_attn") return run_window_attention_oracle(trials, seed);
  if (which == "cda") return run_cda_oracle(trials, seed);
  if (which == "metrics") return run_metrics_oracle(trials, seed);
  fail("unknown oracle: ", which, " (expected window_attn, cda, or metrics)");
}

}  // namespace crossview
