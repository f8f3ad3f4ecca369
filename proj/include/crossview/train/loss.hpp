#pragma once

#include "crossview/config.hpp"
#include "crossview/core/autograd.hpp"
#include "crossview/data/raster.hpp"

namespace crossview {

inline Tensor mask_to_tensor(const Raster& mask) {
  require(mask.c == 1, "mask_to_tensor: single-channel mask required");
  Tensor t({mask.h * mask.w});
  for (size_t i = 0; i < mask.pix.size(); ++i) t[static_cast<int64_t>(i)] = mask.pix[i] ? 1.0 : 0.0;
  return t;
}

/// Soft Dice loss 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), eps = 1.
inline Var dice_loss(const Var& pred_fg, const Tensor& gt, double eps = 1.0) {
  require(pred_fg->value.size() == gt.size(), "dice_loss: shape mismatch");
  Var inter = dot_const(pred_fg, gt);
  double gsum = 0.0;
  for (int64_t i = 0; i < gt.size(); ++i) gsum += gt[i];
  Var numer = add_scalar(scale(inter, 2.0), eps);
  Var denom = add_scalar(sum_all(pred_fg), gsum + eps);
  return add_scalar(neg(div(numer, denom)), 1.0);
}

/// Mean binary cross entropy with probabilities clamped to [1e-7, 1-1e-7].
inline Var bce_loss(const Var& pred_fg, const Tensor& gt) {
  require(pred_fg->value.size() == gt.size(), "bce_loss: shape mismatch");
  Var p = clamp(pred_fg, 1e-7, 1.0 - 1e-7);
  Var one_minus_p = add_scalar(neg(p), 1.0);
  Tensor one_minus_g(gt.shape());
  for (int64_t i = 0; i < gt.size(); ++i) one_minus_g[i] = 1.0 - gt[i];
  Var fg_term = dot_const(log_(p), gt);
  Var bg_term = dot_const(log_(one_minus_p), one_minus_g);
  return scale(add(fg_term, bg_term), -1.0 / static_cast<double>(gt.size()));
}

struct LossParts {
  Var total, dice, bce;
};

/// Weighted Dice + BCE on the foreground channel of a [H,W,2] prediction.
inline LossParts total_loss(const Var& pred, const Raster& gt_mask, double dice_weight,
                            double bce_weight) {
  require(pred->value.rank() == 3 && pred->value.dim(2) == 2,
          "total_loss: expected [H,W,2] prediction");
  require(pred->value.dim(0) == gt_mask.h && pred->value.dim(1) == gt_mask.w,
          "total_loss: prediction/mask size mismatch");
  int hw = gt_mask.h * gt_mask.w;
  Var fg = reshape(slice_lastdim(reshape(pred, {hw, 2}), 1, 2), {hw});
  Tensor gt = mask_to_tensor(gt_mask);
  LossParts parts;
  parts.dice = dice_loss(fg, gt);
  parts.bce = bce_loss(fg, gt);
  parts.total = add(scale(parts.dice, dice_weight), scale(parts.bce, bce_weight));
  return parts;
}

}  // namespace crossview
