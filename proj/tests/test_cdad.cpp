#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crossview/core/gradcheck.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/oracle/naive.hpp"

using namespace crossview;

namespace {

oracle::CdaPassParams pass_params(const CdaPass& p) {
  oracle::CdaPassParams out;
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
  return out;
}

}  // namespace

TEST_CASE("dilation spec reproduces the reference offsets") {
  DilationSpec a = make_dilation_spec(12, 5, 3);
  CHECK(a.n_slice == 3);
  CHECK(a.h_adjust == 15);
  CHECK(a.offsets == std::vector<int>{1, 3, 7});
  CHECK(a.bank_width() == 35);

  DilationSpec b = make_dilation_spec(20, 5, 3);
  CHECK(b.h_adjust == 20);
  CHECK(b.offsets == std::vector<int>{2, 5, 10});

  DilationSpec c = make_dilation_spec(8, 4, 1);
  CHECK(c.h_adjust == 8);
  CHECK(c.offsets == std::vector<int>{4});
}

TEST_CASE("dilation offsets follow the floor formula for random geometries") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    int h4 = static_cast<int>(rng.integer(1, 40));
    int s = static_cast<int>(rng.integer(1, 7));
    int j = static_cast<int>(rng.integer(1, 4));
    DilationSpec spec = make_dilation_spec(h4, s, j);
    CHECK(spec.h_adjust == spec.n_slice * spec.slice_size);
    CHECK(spec.h_adjust >= h4);
    for (int jj = 0; jj < j; ++jj) {
      int expect = static_cast<int>(std::floor(spec.h_adjust / std::pow(2.0, j - jj)));
      CHECK(spec.offsets[static_cast<size_t>(jj)] == expect);
    }
    CHECK(spec.offsets.back() == spec.h_adjust / 2);
    if (spec.h_adjust >= (1 << j))
      for (size_t t = 1; t < spec.offsets.size(); ++t)
        CHECK(spec.offsets[t] > spec.offsets[t - 1]);
  }
}

TEST_CASE("expand_keys selects the documented shifted rows on a ramp") {
  DilationSpec spec = make_dilation_spec(6, 3, 2);  // Ha = 6, offsets [1, 3]
  int ha = spec.h_adjust;
  Tensor k({ha, ha, 1});
  for (int r = 0; r < ha; ++r)
    for (int c = 0; c < ha; ++c) k.at3(r, c, 0) = 100.0 * r + c;

  Var padded = element_gather(constant(k), geom::pad_rows(ha, ha, 1, ha, ha), {3 * ha, ha, 1});
  Tensor bank = expand_keys(padded, spec)->value;
  REQUIRE(bank.shape() == std::vector<int>{ha, spec.n_slice, spec.bank_width(), 1});

  std::vector<int> deltas = {0, 1, -1, 3, -3};
  for (int r = 0; r < ha; ++r)
    for (int ns = 0; ns < spec.n_slice; ++ns)
      for (size_t d = 0; d < deltas.size(); ++d)
        for (int s = 0; s < spec.slice_size; ++s) {
          int src_row = r + deltas[d];
          double expect = (src_row >= 0 && src_row < ha)
                              ? 100.0 * src_row + (ns * spec.slice_size + s)
                              : 0.0;
          int64_t idx = ((static_cast<int64_t>(r) * spec.n_slice + ns) * spec.bank_width() +
                         static_cast<int64_t>(d) * spec.slice_size + s);
          CHECK(bank[idx] == expect);
        }
}

TEST_CASE("zero input produces a zero bank") {
  DilationSpec spec = make_dilation_spec(5, 5, 3);
  int ha = spec.h_adjust;
  Var padded =
      element_gather(constant(Tensor::zeros({ha, ha, 2})), geom::pad_rows(ha, ha, 2, ha, ha),
                     {3 * ha, ha, 2});
  Tensor bank = expand_keys(padded, spec)->value;
  for (int64_t i = 0; i < bank.size(); ++i) CHECK(bank[i] == 0.0);
}

TEST_CASE("patchify splits strided sub-grids and regroups exactly") {
  Rng rng(5);
  Tensor x = rng.uniform_tensor({4, 4, 3}, -1, 1);
  Var subs = patchify_close_query(constant(x), 2);
  CHECK(subs->value.shape() == std::vector<int>{4, 2, 2, 3});
  CHECK(max_abs_diff(regroup_close_query(subs, 2)->value, x) == 0.0);

  // ramp: sub (0,0) holds even rows and columns
  Tensor ramp({4, 4, 1});
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  Tensor r = patchify_close_query(constant(ramp), 2)->value;
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(r[2] == 8.0);
  CHECK(r[3] == 10.0);

  // n = 1 identity
  Var same = patchify_close_query(constant(x), 1);
  CHECK(max_abs_diff(same->value.reshaped({4, 4, 3}), x) == 0.0);
  CHECK_THROWS_AS(patchify_close_query(constant(Tensor::zeros({5, 5, 1})), 2), Error);
}

TEST_CASE("fuse_joint with averaging weights is an identity on twin inputs") {
  ModelConfig cfg;
  cfg.stage_channels = {2, 3, 4, 6};
  cfg.input_side = 160;  // H4 = 5
  cfg.slice_size = 5;
  cfg.dilation_density = 2;
  ParamRegistry reg;
  Rng rng(7);
  Decoder dec(reg, "dec", cfg, rng);

  int c4 = 6;
  Var w = reg.find("dec.fuse.w");
  w->value.fill(0.0);
  for (int o = 0; o < c4; ++o) {
    w->value[o * c4 + o] = 0.5;            // first half
    w->value[(c4 + o) * c4 + o] = 0.5;     // second half
  }
  reg.find("dec.fuse.b")->value.fill(0.0);

  Tensor x = rng.uniform_tensor({5, 5, c4}, -1, 1);
  Tensor joint = dec.fuse_joint(constant(x), constant(x))->value;
  CHECK(joint.shape() == std::vector<int>{5, 5, c4});
  CHECK(max_abs_diff(joint, x) < 1e-12);

  Tensor y = rng.uniform_tensor({5, 5, c4}, -1, 1);
  CHECK(dec.fuse_joint(constant(x), constant(y))->value.shape() == std::vector<int>{5, 5, c4});
}

TEST_CASE("fuse_joint gradient") {
  ParamRegistry reg;
  Rng rng(9);
  Conv1x1 fuse(reg, "fuse", 8, 4, rng);
  Var a = reg.param("a", rng.uniform_tensor({3, 3, 4}, -1, 1));
  Var b = reg.param("b", rng.uniform_tensor({3, 3, 4}, -1, 1));
  Tensor w = rng.uniform_tensor({3, 3, 4}, -1, 1);
  auto rep = gradcheck_registry(
      reg, [&] { return dot_const(fuse(concat_lastdim(a, b)), w); }, 1e-5, 1, 40);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("cda enhancement matches the gather-based dense oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    int h4 = static_cast<int>(rng.integer(2, 8));  // non-divisible cases force the resize
    int s = static_cast<int>(rng.integer(2, 4));
    int j = static_cast<int>(rng.integer(1, 3));
    int c = static_cast<int>(rng.integer(2, 5));
    DilationSpec spec = make_dilation_spec(h4, s, j);
    int ha = spec.h_adjust;

    ParamRegistry reg;
    Rng prng(100 + static_cast<uint64_t>(trial));
    CdaOperator cda(reg, "cda", c, prng);

    Tensor raw = rng.uniform_tensor({h4, h4, c}, -1, 1);
    Tensor joint_raw = rng.uniform_tensor({h4, h4, c}, -1, 1);
    NoGradGuard ng;
    Tensor query = resize_bilinear(constant(raw), ha, ha)->value;
    Tensor joint = resize_bilinear(constant(joint_raw), ha, ha)->value;

    auto banks = cda.prepare(constant(joint), spec);
    Tensor got = cda.enhance(constant(query), banks, spec)->value;
    Tensor expect = oracle::cda_enhance(query, joint, spec, pass_params(cda.vertical),
                                        pass_params(cda.transposed));
    CHECK(max_abs_diff(got, expect) < 1e-6);
  }
}

TEST_CASE("duplicated zero-offset keys act as multiplicity weights") {
  // H_adjust < 2^J makes d_0 = 0, duplicating the unshifted block
  DilationSpec spec = make_dilation_spec(2, 1, 2);
  REQUIRE(spec.offsets[0] == 0);
  int ha = spec.h_adjust;
  ParamRegistry reg;
  Rng rng(13);
  CdaPass pass(reg, "p", 2, rng);
  Tensor query = rng.uniform_tensor({ha, ha, 2}, -1, 1);
  Tensor joint = rng.uniform_tensor({ha, ha, 2}, -1, 1);
  auto bank = pass.prepare(constant(joint), spec);
  Tensor got = pass.enhance(constant(query), bank, spec)->value;
  Tensor expect = oracle::cda_pass(query, joint, spec, pass_params(pass));
  CHECK(max_abs_diff(got, expect) < 1e-9);
}

TEST_CASE("cda gradient check at toy dims") {
  DilationSpec spec = make_dilation_spec(6, 3, 2);
  REQUIRE(spec.h_adjust == 6);
  ParamRegistry reg;
  Rng rng(17);
  CdaOperator cda(reg, "cda", 4, rng);
  Var query = reg.param("query", rng.uniform_tensor({6, 6, 4}, -1, 1));
  Var joint = reg.param("joint", rng.uniform_tensor({6, 6, 4}, -1, 1));
  Tensor w = rng.uniform_tensor({6, 6, 4}, -1, 1);
  auto rep = gradcheck_registry(
      reg,
      [&] {
        auto banks = cda.prepare(joint, spec);
        return dot_const(cda.enhance(query, banks, spec), w);
      },
      1e-5, 1, 12);
  INFO("worst: ", rep.worst_param);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("decoder stages double spatial side and the head normalizes") {
  ModelConfig cfg;
  cfg.input_side = 64;  // stage sides 16, 8, 4, 2
  cfg.n_view = 2;
  cfg.stage_channels = {4, 6, 8, 10};
  cfg.slice_size = 3;
  cfg.dilation_density = 2;
  cfg.seed = 19;
  ParamRegistry reg;
  Rng rng(cfg.seed);
  Decoder dec(reg, "dec", cfg, rng);

  std::array<StageFeatures, 4> feats;
  for (int i = 0; i < 4; ++i) {
    int side = cfg.stage_side(i + 1);
    int ch = cfg.stage_channels[static_cast<size_t>(i)];
    feats[static_cast<size_t>(i)].remote = constant(rng.uniform_tensor({side, side, ch}, -1, 1));
    for (int p = 0; p < 4; ++p)
      feats[static_cast<size_t>(i)].close.push_back(
          constant(rng.uniform_tensor({side, side, ch}, -1, 1)));
  }
  NoGradGuard ng;
  DecoderOutput out = dec.forward(feats, false);

  REQUIRE(out.stages.size() == 4);
  CHECK(out.stages[0]->value.dim(1) == dec.spec.h_adjust);
  CHECK(out.stages[1]->value.dim(1) == cfg.stage_side(3));
  CHECK(out.stages[2]->value.dim(1) == cfg.stage_side(2));
  CHECK(out.stages[3]->value.dim(1) == cfg.stage_side(1));
  for (int i = 1; i < 3; ++i)
    CHECK(out.stages[static_cast<size_t>(i + 1)]->value.dim(1) ==
          2 * out.stages[static_cast<size_t>(i)]->value.dim(1));

  int sup = cfg.supervision_side();
  CHECK(out.pred->value.shape() == std::vector<int>{sup, sup, 2});
  double worst = 0;
  for (int i = 0; i < sup * sup; ++i)
    worst = std::max(worst,
                     std::abs(out.pred->value[2 * i] + out.pred->value[2 * i + 1] - 1.0));
  CHECK(worst < 1e-6);
}

TEST_CASE("decoder truncation predicts from the last available stage") {
  ModelConfig cfg;
  cfg.input_side = 32;
  cfg.n_view = 2;
  cfg.stage_channels = {4, 6, 8, 10};
  cfg.slice_size = 3;
  cfg.dilation_density = 2;
  cfg.seed = 23;
  Rng data_rng(31);
  auto make_feats = [&](ParamRegistry&) {
    std::array<StageFeatures, 4> feats;
    for (int i = 0; i < 4; ++i) {
      int side = cfg.stage_side(i + 1);
      int ch = cfg.stage_channels[static_cast<size_t>(i)];
      feats[static_cast<size_t>(i)].remote =
          constant(data_rng.uniform_tensor({side, side, ch}, -1, 1));
      for (int p = 0; p < 4; ++p)
        feats[static_cast<size_t>(i)].close.push_back(
            constant(data_rng.uniform_tensor({side, side, ch}, -1, 1)));
    }
    return feats;
  };
  NoGradGuard ng;
  for (auto [trunc, expect_stages] :
       std::vector<std::pair<DecoderTruncate, size_t>>{{DecoderTruncate::d4, 3},
                                                       {DecoderTruncate::d4d3, 2},
                                                       {DecoderTruncate::d4d3d2, 1}}) {
    ParamRegistry reg;
    Rng rng(cfg.seed);
    Decoder dec(reg, "dec", cfg, rng, trunc);
    DecoderOutput out = dec.forward(make_feats(reg), false);
    CHECK(out.stages.size() == expect_stages);
    int sup = cfg.supervision_side();
    CHECK(out.pred->value.shape() == std::vector<int>{sup, sup, 2});
  }
}

TEST_CASE("predict_mask binarizes with a strict threshold") {
  Tensor pred({1, 3, 2});
  // (bg, fg): all-one foreground; 0.4/0.6 split; exact tie
  pred.at3(0, 0, 0) = 0.0;
  pred.at3(0, 0, 1) = 1.0;
  pred.at3(0, 1, 0) = 0.4;
  pred.at3(0, 1, 1) = 0.6;
  pred.at3(0, 2, 0) = 0.5;
  pred.at3(0, 2, 1) = 0.5;
  Raster m = predict_mask_raster(pred, 0.5);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(0, 2) == 0);  // ties go background

  Tensor ones({2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    ones[2 * i] = 0.0;
    ones[2 * i + 1] = 1.0;
  }
  Raster all = predict_mask_raster(ones, 0.5);
  for (uint8_t v : all.pix) CHECK(v == 1);
}
