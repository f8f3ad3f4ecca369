#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crossview/core/autograd.hpp"
#include "crossview/core/geometry.hpp"
#include "crossview/core/gradcheck.hpp"
#include "crossview/core/nn.hpp"
#include "crossview/core/rng.hpp"

using namespace crossview;

namespace {

Rng test_rng(123);

Var rand_param(ParamRegistry& reg, const std::string& name, std::vector<int> shape) {
  return reg.param(name, test_rng.uniform_tensor(std::move(shape), -1.0, 1.0));
}

// FD check of a unary/n-ary op: loss = sum(op(params) * fixed random weights)
double check_op(ParamRegistry& reg, const std::function<Var()>& apply) {
  Tensor w = test_rng.uniform_tensor(apply()->value.shape(), -1.0, 1.0);
  auto rep = gradcheck_registry(reg, [&] { return dot_const(apply(), w); }, 1e-6);
  return rep.max_rel_err;
}

}  // namespace

TEST_CASE("matmul matches naive triple loop") {
  Rng rng(7);
  Tensor a = rng.uniform_tensor({5, 4}, -2, 2);
  Tensor b = rng.uniform_tensor({4, 6}, -2, 2);
  Var va = constant(a), vb = constant(b);
  Tensor got = matmul(va, vb)->value;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 6 + j];
      CHECK(got[i * 6 + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("elementwise and scalar op gradients") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {3, 4});
  Var b = rand_param(reg, "b", {3, 4});
  CHECK(check_op(reg, [&] { return add(a, b); }) < 1e-7);
  CHECK(check_op(reg, [&] { return sub(a, b); }) < 1e-7);
  CHECK(check_op(reg, [&] { return mul(a, b); }) < 1e-7);
  CHECK(check_op(reg, [&] { return scale(a, -2.5); }) < 1e-7);
  CHECK(check_op(reg, [&] { return add_scalar(a, 3.0); }) < 1e-7);
}

TEST_CASE("div gradient away from zero denominator") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {6});
  Var b = reg.param("b", Tensor::from({6}, {1.5, 2.0, -1.7, 3.0, -2.2, 1.1}));
  CHECK(check_op(reg, [&] { return div(a, b); }) < 1e-6);
}

TEST_CASE("activation gradients") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {4, 3});
  CHECK(check_op(reg, [&] { return tanh_(a); }) < 1e-7);
  CHECK(check_op(reg, [&] { return gelu(a); }) < 1e-7);
  // keep relu inputs away from the kink
  Var shifted = reg.param("shifted", Tensor::from({4}, {0.5, -0.7, 1.2, -2.0}));
  CHECK(check_op(reg, [&] { return relu(shifted); }) < 1e-7);
  Var pos = reg.param("pos", Tensor::from({4}, {0.5, 0.9, 1.4, 0.2}));
  CHECK(check_op(reg, [&] { return log_(pos); }) < 1e-6);
  CHECK(check_op(reg, [&] { return clamp(pos, 0.3, 1.2); }) < 1e-6);
}

TEST_CASE("matmul / bmm / transpose gradients") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {3, 4});
  Var b = rand_param(reg, "b", {4, 5});
  CHECK(check_op(reg, [&] { return matmul(a, b); }) < 1e-6);

  ParamRegistry reg2;
  Var ba = rand_param(reg2, "ba", {2, 3, 4});
  Var bb = rand_param(reg2, "bb", {2, 4, 5});
  CHECK(check_op(reg2, [&] { return bmm(ba, bb); }) < 1e-6);
  CHECK(check_op(reg2, [&] { return transpose_last2(ba); }) < 1e-7);
}

TEST_CASE("softmax rows sum to one and gradients pass") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {5, 7});
  Var y = softmax_lastdim(a);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += y->value[r * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(check_op(reg, [&] { return softmax_lastdim(a); }) < 1e-6);
}

TEST_CASE("masked softmax zeroes masked keys exactly") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {4, 6});
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0, 1};
  Var y = softmax_lastdim(a, &mask);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      if (!mask[j]) CHECK(y->value[r * 6 + j] == 0.0);
      s += y->value[r * 6 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(check_op(reg, [&] { return softmax_lastdim(a, &mask); }) < 1e-6);
}

TEST_CASE("reduction and shape op gradients") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {3, 5});
  Var b = rand_param(reg, "bias", {5});
  CHECK(check_op(reg, [&] { return sum_all(a); }) < 1e-7);
  CHECK(check_op(reg, [&] { return mean_all(a); }) < 1e-7);
  CHECK(check_op(reg, [&] { return reshape(a, {5, 3}); }) < 1e-7);
  CHECK(check_op(reg, [&] { return add_bias(a, b); }) < 1e-7);
  CHECK(check_op(reg, [&] { return row_scale(a, {1.0, 0.0, 2.0}); }) < 1e-7);
  CHECK(check_op(reg, [&] { return concat_lastdim(a, a); }) < 1e-7);
  CHECK(check_op(reg, [&] { return slice_lastdim(a, 1, 4); }) < 1e-7);
  CHECK(check_op(reg, [&] { return stack0({a, a}); }) < 1e-7);
  CHECK(check_op(reg, [&] { return slice0(stack0({a, a}), 1); }) < 1e-7);
}

TEST_CASE("element gather and scatter-add backward") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {2, 3, 4});  // [H,W,C]
  auto m = geom::transpose_hw(2, 3, 4);
  Var t = element_gather(a, m, {3, 2, 4});
  // involution
  auto m2 = geom::transpose_hw(3, 2, 4);
  Var back = element_gather(t, m2, {2, 3, 4});
  CHECK(max_abs_diff(back->value, a->value) == 0.0);
  CHECK(check_op(reg, [&] { return element_gather(a, m, {3, 2, 4}); }) < 1e-7);

  // batched variant with zero slots (-1) via pad_rows
  auto pad = geom::pad_rows(2, 3, 4, 2, 2);
  ParamRegistry reg2;
  Var xb = rand_param(reg2, "xb", {3, 2, 3, 4});
  CHECK(check_op(reg2, [&] {
          return element_gather_batched(xb, pad, 2 * 3 * 4, {6, 3, 4});
        }) < 1e-7);
}

TEST_CASE("structural maps round trip exactly") {
  Rng rng(11);
  Tensor x = rng.uniform_tensor({8, 8, 3}, -1, 1);
  Var vx = constant(x);

  Var tiles = split_grid(vx, 2);
  CHECK(tiles->value.shape() == std::vector<int>{4, 4, 4, 3});
  CHECK(max_abs_diff(assemble_grid(tiles)->value, x) == 0.0);

  auto part = geom::window_partition(8, 8, 4, 3);
  Var wins = element_gather(vx, part, {4, 4, 4, 3});
  Var merged = element_gather(wins, geom::window_merge(8, 8, 4, 3), {8, 8, 3});
  CHECK(max_abs_diff(merged->value, x) == 0.0);

  auto pat = geom::patchify_strided(8, 8, 2, 3);
  Var subs = element_gather(vx, pat, {4, 4, 4, 3});
  Var regrouped = element_gather(subs, geom::regroup_strided(8, 8, 2, 3), {8, 8, 3});
  CHECK(max_abs_diff(regrouped->value, x) == 0.0);
}

TEST_CASE("patchify places strided entries") {
  // ramp over a 4x4 single-channel grid; sub (0,0) should hold even rows/cols
  Tensor x({4, 4, 1});
  for (int i = 0; i < 16; ++i) x[i] = i;
  Var subs = element_gather(constant(x), geom::patchify_strided(4, 4, 2, 1), {4, 2, 2, 1});
  CHECK(subs->value[0] == 0.0);
  CHECK(subs->value[1] == 2.0);
  CHECK(subs->value[2] == 8.0);
  CHECK(subs->value[3] == 10.0);
}

TEST_CASE("bilinear resize is identity at equal size and interpolates means") {
  Rng rng(5);
  Tensor x = rng.uniform_tensor({6, 6, 2}, -1, 1);
  Var vx = constant(x);
  CHECK(resize_bilinear(vx, 6, 6).get() == vx.get());  // no-op shortcut

  // 2x downsample of a constant tensor stays constant
  Var cte = constant(Tensor::full({8, 8, 1}, 3.25));
  Tensor small = resize_bilinear(cte, 4, 4)->value;
  for (int64_t i = 0; i < small.size(); ++i) CHECK(small[i] == doctest::Approx(3.25));

  ParamRegistry reg;
  Var p = rand_param(reg, "p", {5, 7, 2});
  CHECK(check_op(reg, [&] { return resize_bilinear(p, 9, 4); }) < 1e-6);
}

TEST_CASE("gather_rows backward accumulates per id") {
  ParamRegistry reg;
  Var table = rand_param(reg, "table", {6, 3});
  std::vector<int> ids = {0, 2, 2, 5};
  CHECK(check_op(reg, [&] { return gather_rows(table, ids); }) < 1e-7);
}

TEST_CASE("layer norm gradient") {
  ParamRegistry reg;
  Var x = rand_param(reg, "x", {4, 6});
  Var g = reg.param("g", Tensor::full({6}, 1.3));
  Var b = reg.param("b", Tensor::from({6}, {0.1, -0.2, 0.3, 0.0, 0.5, -0.4}));
  CHECK(check_op(reg, [&] { return layer_norm_lastdim(x, g, b); }) < 1e-6);
}

TEST_CASE("batch norm train and eval gradients") {
  ParamRegistry reg;
  Var x = rand_param(reg, "x", {10, 3});
  Var g = reg.param("g", Tensor::full({3}, 1.2));
  Var b = reg.param("b", Tensor::from({3}, {0.2, -0.1, 0.4}));
  Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
  CHECK(check_op(reg, [&] {
          return batch_norm_channels(x, g, b, rm, rv, true, false);
        }) < 1e-6);
  Tensor rm2 = Tensor::from({3}, {0.1, -0.3, 0.2}), rv2 = Tensor::from({3}, {0.9, 1.4, 0.7});
  CHECK(check_op(reg, [&] {
          return batch_norm_channels(x, g, b, rm2, rv2, false, false);
        }) < 1e-6);
}

TEST_CASE("linear / conv3x3 / mlp module gradients") {
  Rng rng(21);
  {
    ParamRegistry reg;
    Linear lin(reg, "lin", 4, 3, rng);
    Var x = reg.param("x", rng.uniform_tensor({5, 4}, -1, 1));
    CHECK(check_op(reg, [&] { return lin(x); }) < 1e-6);
  }
  {
    ParamRegistry reg;
    Conv3x3 conv(reg, "conv", 2, 3, rng);
    Var x = reg.param("x", rng.uniform_tensor({4, 5, 2}, -1, 1));
    CHECK(check_op(reg, [&] { return conv(x); }) < 1e-6);
    Var xb = reg.param("xb", rng.uniform_tensor({2, 4, 5, 2}, -1, 1));
    CHECK(check_op(reg, [&] { return conv(xb); }) < 1e-6);
  }
  {
    ParamRegistry reg;
    Mlp mlp(reg, "mlp", 4, 8, rng);
    Var x = reg.param("x", rng.uniform_tensor({3, 4}, -1, 1));
    CHECK(check_op(reg, [&] { return mlp(x); }) < 1e-6);
  }
}

TEST_CASE("conv3x3 matches direct accumulation") {
  Rng rng(31);
  ParamRegistry reg;
  Conv3x3 conv(reg, "conv", 2, 1, rng);
  Tensor x = rng.uniform_tensor({5, 6, 2}, -1, 1);
  Tensor y = conv(constant(x))->value;
  const Tensor& w = conv.w->value;  // [9*2, 1]
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j) {
      double acc = conv.b->value[0];
      int t = 0;
      for (int ky = -1; ky <= 1; ++ky)
        for (int kx = -1; kx <= 1; ++kx)
          for (int c = 0; c < 2; ++c, ++t) {
            int si = i + ky, sj = j + kx;
            if (si >= 0 && si < 5 && sj >= 0 && sj < 6) acc += x.at3(si, sj, c) * w[t];
          }
      CHECK(y.at3(i, j, 0) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("no-grad mode records nothing") {
  ParamRegistry reg;
  Var a = rand_param(reg, "a", {2, 2});
  NoGradGuard ng;
  Var y = mul(a, a);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("gradients accumulate across backward calls") {
  ParamRegistry reg;
  Var a = reg.param("a", Tensor::from({2}, {1.0, 2.0}));
  backward(sum_all(a));
  backward(sum_all(a));
  CHECK(a->grad[0] == doctest::Approx(2.0));
  reg.zero_grad();
  CHECK(a->grad[0] == 0.0);
}

TEST_CASE("seeded init is deterministic") {
  seed_all(42);
  Tensor t1 = global_rng().uniform_tensor({8}, -1, 1);
  seed_all(42);
  Tensor t2 = global_rng().uniform_tensor({8}, -1, 1);
  CHECK(max_abs_diff(t1, t2) == 0.0);
  seed_all(43);
  Tensor t3 = global_rng().uniform_tensor({8}, -1, 1);
  CHECK(max_abs_diff(t1, t3) > 0.0);
}
