#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crossview/core/gradcheck.hpp"
#include "crossview/eval/metrics.hpp"
#include "crossview/oracle/naive.hpp"
#include "crossview/train/loss.hpp"

using namespace crossview;

namespace {
Var fg(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return make_leaf(Tensor::from({n}, std::move(v)));
}
Tensor gt(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor::from({n}, std::move(v));
}
}  // namespace

TEST_CASE("dice loss reference values") {
  // perfect binary prediction: (2S+1)/(2S+1) -> exactly zero
  Var p = fg({1, 0, 1, 1});
  CHECK(dice_loss(p, gt({1, 0, 1, 1}))->value[0] == 0.0);

  // uniform 0.5 on a half-foreground 4-pixel mask: 1 - 3/5
  Var half = fg({0.5, 0.5, 0.5, 0.5});
  CHECK(dice_loss(half, gt({1, 1, 0, 0}))->value[0] == doctest::Approx(0.4).epsilon(1e-12));

  // disjoint prediction and truth approach loss 1 as masks grow
  int n = 10000;
  std::vector<double> pv(n, 0.0), gv(n, 0.0);
  for (int i = 0; i < n / 2; ++i) pv[i] = 1.0;
  for (int i = n / 2; i < n; ++i) gv[i] = 1.0;
  double big = dice_loss(fg(pv), gt(gv))->value[0];
  CHECK(big > 0.999);
  CHECK(big < 1.0);
}

TEST_CASE("bce loss reference values") {
  // confident correct prediction hits the clamp floor
  Var sure = fg({1.0, 0.0});
  double v = bce_loss(sure, gt({1, 0}))->value[0];
  CHECK(v == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));
  CHECK(v <= 1.1e-7);

  Var coin = fg({0.5, 0.5, 0.5});
  CHECK(bce_loss(coin, gt({1, 0, 1}))->value[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Var quarter = fg({0.25});
  CHECK(bce_loss(quarter, gt({1}))->value[0] ==
        doctest::Approx(-std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("total loss combines the specified weights") {
  // dice = 0 and bce ~ 0 for a perfect binary prediction
  Raster mask(2, 2, 1);
  mask.at(0, 0) = 1;
  Tensor pred({2, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      bool on = mask.at(y, x) != 0;
      pred.at3(y, x, 0) = on ? 0.0 : 1.0;
      pred.at3(y, x, 1) = on ? 1.0 : 0.0;
    }
  LossParts parts = total_loss(make_leaf(pred), mask, 0.9, 0.1);
  CHECK(parts.total->value[0] == doctest::Approx(0.0).epsilon(1e-7));

  // dice = 1, bce = ln 2 -> 0.9 + 0.0693
  double combo = 0.9 * 1.0 + 0.1 * std::log(2.0);
  CHECK(combo == doctest::Approx(0.9693).epsilon(1e-3));

  // weight plumbing: overriding weights changes the mix
  LossParts p2 = total_loss(make_leaf(pred), mask, 0.5, 0.5);
  CHECK(p2.total->value[0] ==
        doctest::Approx(0.5 * p2.dice->value[0] + 0.5 * p2.bce->value[0]).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  ParamRegistry reg;
  Rng rng(3);
  Tensor logits = rng.uniform_tensor({3, 3, 2}, -1, 1);
  Var raw = reg.param("logits", logits);
  Raster mask(3, 3, 1);
  mask.at(0, 0) = 1;
  mask.at(1, 2) = 1;
  auto build = [&] {
    Var pred = softmax_lastdim(raw);
    return total_loss(pred, mask, 0.9, 0.1).total;
  };
  auto rep = gradcheck_registry(reg, build, 1e-6);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("iou counts pixels exactly") {
  Raster a(4, 4, 1), b(4, 4, 1);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) a.at(y, x) = 1;  // top-left 2x2
  for (int y = 1; y < 3; ++y)
    for (int x = 1; x < 3; ++x) b.at(y, x) = 1;  // shifted 2x2, overlap 1
  EvalRecord r = iou(a, b);
  CHECK(r.intersection == 1);
  CHECK(r.union_count == 7);
  CHECK(r.iou == doctest::Approx(1.0 / 7));

  // identical masks and disjoint masks
  CHECK(iou(a, a).iou == 1.0);
  Raster c(4, 4, 1);
  c.at(3, 3) = 1;
  CHECK(iou(a, c).iou == 0.0);

  // spec example: 2x2 blocks overlapping in 2 pixels -> I=2, U=6
  Raster p(4, 4, 1), g(4, 4, 1);
  p.at(0, 0) = p.at(0, 1) = p.at(1, 0) = p.at(1, 1) = 1;
  g.at(0, 1) = g.at(0, 2) = g.at(1, 1) = g.at(1, 2) = 1;
  EvalRecord r2 = iou(p, g);
  CHECK(r2.intersection == 2);
  CHECK(r2.union_count == 6);
  CHECK(r2.iou == doctest::Approx(1.0 / 3));

  Raster wrong(3, 4, 1);
  CHECK_THROWS_AS(iou(a, wrong), Error);
}

TEST_CASE("aggregate metrics match the hand-computed example") {
  std::vector<EvalRecord> recs(2);
  recs[0].intersection = 90;
  recs[0].union_count = 100;
  recs[0].iou = 0.9;
  recs[1].intersection = 1;
  recs[1].union_count = 10;
  recs[1].iou = 0.1;
  CHECK(std::abs(oiou(recs) - 91.0 / 110.0) < 1e-12);
  CHECK(std::abs(miou(recs) - 0.5) < 1e-12);

  std::vector<EvalRecord> three(3);
  three[0].iou = 0.6;
  three[1].iou = 0.4;
  three[2].iou = 0.9;
  CHECK(precision_at(three, 0.5) == doctest::Approx(100.0 * 2 / 3));
  // strict inequality at the threshold
  std::vector<EvalRecord> edge(1);
  edge[0].iou = 0.5;
  CHECK(precision_at(edge, 0.5) == 0.0);

  std::vector<EvalRecord> single(1);
  single[0].intersection = 3;
  single[0].union_count = 4;
  single[0].iou = 0.75;
  CHECK(oiou(single) == miou(single));
  CHECK(oiou(single) == 0.75);

  CHECK_THROWS_AS(oiou({}), Error);
  CHECK_THROWS_AS(miou({}), Error);
  CHECK_THROWS_AS(precision_at({}, 0.5), Error);
}

TEST_CASE("metrics agree with the pixel-loop oracle on random masks") {
  Rng rng(7);
  std::vector<EvalRecord> fast, slow;
  for (int t = 0; t < 100; ++t) {
    int h = static_cast<int>(rng.integer(1, 12));
    int w = static_cast<int>(rng.integer(1, 12));
    Raster a(h, w, 1), b(h, w, 1);
    for (auto& v : a.pix) v = rng.integer(0, 3) == 0 ? 1 : 0;
    for (auto& v : b.pix) v = rng.integer(0, 3) == 0 ? 1 : 0;
    EvalRecord f = iou(a, b);
    EvalRecord s = oracle::iou(a, b);
    CHECK(f.intersection == s.intersection);
    CHECK(f.union_count == s.union_count);
    CHECK(std::abs(f.iou - s.iou) < 1e-12);
    fast.push_back(f);
    slow.push_back(s);
  }
  CHECK(std::abs(oiou(fast) - oiou(slow)) < 1e-12);
  CHECK(std::abs(miou(fast) - miou(slow)) < 1e-12);
  for (double t : precision_thresholds())
    CHECK(precision_at(fast, t) == precision_at(slow, t));
}

TEST_CASE("overall IoU stays within [0,1] because intersections never exceed unions") {
  Rng rng(31);
  for (int t = 0; t < 25; ++t) {
    std::vector<EvalRecord> recs;
    int n = static_cast<int>(rng.integer(1, 12));
    int64_t inter_sum = 0, union_sum = 0;
    for (int i = 0; i < n; ++i) {
      Raster a(6, 6, 1), b(6, 6, 1);
      for (auto& v : a.pix) v = rng.integer(0, 2) == 0 ? 1 : 0;
      for (auto& v : b.pix) v = rng.integer(0, 2) == 0 ? 1 : 0;
      EvalRecord r = iou(a, b);
      CHECK(r.intersection <= r.union_count);
      inter_sum += r.intersection;
      union_sum += r.union_count;
      recs.push_back(r);
    }
    double o = oiou(recs);
    CHECK(inter_sum <= union_sum);
    CHECK(o >= 0.0);
    CHECK(o <= 1.0);
  }
}

TEST_CASE("both-empty masks define iou as one") {
  Raster a(3, 3, 1), b(3, 3, 1);
  EvalRecord r = iou(a, b);
  CHECK(r.union_count == 0);
  CHECK(r.iou == 1.0);
}

TEST_CASE("report structure, warnings, and round trip") {
  std::vector<EvalRecord> recs(2);
  recs[0].iou = 1.0;
  recs[0].intersection = 5;
  recs[0].union_count = 5;
  recs[0].category = "circle";
  recs[1].iou = 0.5;
  recs[1].intersection = 1;
  recs[1].union_count = 2;
  recs[1].category = "square";

  auto doc = emit_report(recs, {"circle", "square", "ring"});
  CHECK(doc["overall"]["mIoU"] == doctest::Approx(0.75));
  CHECK(doc["overall"]["oIoU"] == doctest::Approx(6.0 / 7.0));
  CHECK(doc["per_category"]["circle"]["mIoU"] == doctest::Approx(1.0));
  REQUIRE(doc["warnings"].size() == 1);
  CHECK(doc["warnings"][0] == "category 'ring' has no samples");

  // serialize and parse back to the same numbers
  auto reparsed = nlohmann::ordered_json::parse(doc.dump());
  CHECK(reparsed["overall"]["mIoU"].get<double>() ==
        doc["overall"]["mIoU"].get<double>());
  CHECK(reparsed["overall"]["Pr@0.5"].get<double>() ==
        doc["overall"]["Pr@0.5"].get<double>());

  // a perfect single sample scores 1.0 / 100% everywhere
  std::vector<EvalRecord> perfect(1);
  perfect[0].iou = 1.0;
  perfect[0].intersection = 4;
  perfect[0].union_count = 4;
  auto p = emit_report(perfect);
  CHECK(p["overall"]["oIoU"] == doctest::Approx(1.0));
  CHECK(p["overall"]["mIoU"] == doctest::Approx(1.0));
  for (double t : precision_thresholds()) {
    std::ostringstream key;
    key << "Pr@" << std::fixed << std::setprecision(1) << t;
    CHECK(p["overall"][key.str()] == doctest::Approx(100.0));
  }
}

TEST_CASE("ground truth as prediction scores perfectly; inverted masks never pass") {
  Rng rng(23);
  std::vector<EvalRecord> perfect, inverted;
  for (int t = 0; t < 20; ++t) {
    Raster gt(16, 16, 1);
    // targets cover well under half the image
    int y0 = static_cast<int>(rng.integer(0, 10)), x0 = static_cast<int>(rng.integer(0, 10));
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 4; ++x) gt.at(y, x) = 1;
    perfect.push_back(iou(gt, gt));
    Raster inv(16, 16, 1);
    for (size_t i = 0; i < inv.pix.size(); ++i) inv.pix[i] = gt.pix[i] ? 0 : 1;
    inverted.push_back(iou(inv, gt));
  }
  CHECK(oiou(perfect) == 1.0);
  CHECK(miou(perfect) == 1.0);
  for (double t : precision_thresholds()) {
    CHECK(precision_at(perfect, t) == 100.0);
    CHECK(precision_at(inverted, t) == 0.0);
  }
}

TEST_CASE("metrics table prints the conventional column order") {
  std::vector<EvalRecord> recs(1);
  recs[0].iou = 0.75;
  recs[0].intersection = 3;
  recs[0].union_count = 4;
  std::string table = format_metrics_table(recs);
  CHECK(table.find("Pr@0.5") != std::string::npos);
  CHECK(table.find("oIoU") != std::string::npos);
  CHECK(table.find("mIoU") != std::string::npos);
  CHECK(table.find("Pr@0.5") < table.find("oIoU"));
  CHECK(table.find("oIoU") < table.find("mIoU"));
}
