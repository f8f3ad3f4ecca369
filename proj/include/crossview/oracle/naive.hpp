#pragma once

// Brute-force reference implementations used to cross-check the fast paths.
// Everything here works on raw tensors with explicit loops and stays
// independent of the autograd ops and gather maps it verifies.

#include <cmath>
#include <vector>

#include "crossview/core/tensor.hpp"
#include "crossview/data/raster.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/eval/metrics.hpp"

namespace crossview::oracle {

inline void softmax_inplace(std::vector<double>& row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double z = 0;
  for (double& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : row) v /= z;
}

/// y = x @ w + b with explicit loops; x is [N, in].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  int n = x.dim(0), in = x.dim(1), out = w.dim(1);
  Tensor y({n, out});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int k = 0; k < in; ++k) acc += x[i * in + k] * w[k * out + o];
      y[i * out + o] = acc;
    }
  return y;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  int c = x.dim(x.rank() - 1);
  int64_t rows = x.size() / c;
  Tensor y(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double mean = 0;
    for (int j = 0; j < c; ++j) mean += xr[j];
    mean /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) y[r * c + j] = (xr[j] - mean) * is * gain[j] + bias[j];
  }
  return y;
}

/// Dense masked cross attention: queries [Nq,C] over keys/values [Nk,C],
/// allow[q*Nk + k] gates each pair; scaled by sqrt(C).
inline Tensor masked_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const std::vector<uint8_t>& allow) {
  int nq = q.dim(0), nk = k.dim(0), c = q.dim(1);
  require(static_cast<int64_t>(allow.size()) == static_cast<int64_t>(nq) * nk,
          "oracle attention: mask size mismatch");
  Tensor out({nq, c});
  double inv = 1.0 / std::sqrt(static_cast<double>(c));
  for (int i = 0; i < nq; ++i) {
    std::vector<double> scores;
    std::vector<int> keys;
    for (int j = 0; j < nk; ++j) {
      if (!allow[static_cast<size_t>(i) * nk + j]) continue;
      double s = 0;
      for (int cc = 0; cc < c; ++cc) s += q[i * c + cc] * k[j * c + cc];
      scores.push_back(s * inv);
      keys.push_back(j);
    }
    softmax_inplace(scores);
    for (size_t t = 0; t < keys.size(); ++t)
      for (int cc = 0; cc < c; ++cc) out[i * c + cc] += scores[t] * v[keys[t] * c + cc];
  }
  return out;
}

/// Window-paired cross attention as dense attention under a block-diagonal
/// mask: query pixel (y,x) of a [qs*nw]^2 map may only attend to close
/// pixels of the same (y/qs, x/qs) window in the [ks*nw]^2 map. Output keeps
/// the query geometry.
inline Tensor window_exchange(const Tensor& query_map, const Tensor& kv_map, int n_win,
                              int q_win, int k_win) {
  int qs = n_win * q_win, ks = n_win * k_win, c = query_map.dim(2);
  require(query_map.dim(0) == qs && kv_map.dim(0) == ks, "oracle exchange: geometry mismatch");
  Tensor q = query_map.reshaped({qs * qs, c});
  Tensor kv = kv_map.reshaped({ks * ks, c});
  std::vector<uint8_t> allow(static_cast<size_t>(qs) * qs * ks * ks, 0);
  for (int qy = 0; qy < qs; ++qy)
    for (int qx = 0; qx < qs; ++qx)
      for (int ky = 0; ky < ks; ++ky)
        for (int kx = 0; kx < ks; ++kx) {
          bool same = (qy / q_win == ky / k_win) && (qx / q_win == kx / k_win);
          if (same)
            allow[(static_cast<size_t>(qy) * qs + qx) * ks * ks + static_cast<size_t>(ky) * ks +
                  kx] = 1;
        }
  Tensor out = masked_cross_attention(q, kv, kv, allow);
  return out.reshaped({qs, qs, c});
}

/// Language alignment by dense attention with explicit loops; padded tokens
/// are excluded from the softmax.
inline Tensor align_language(const Tensor& v_feat, const Tensor& lang,
                             const std::vector<uint8_t>& mask, const Tensor& qw, const Tensor& qb,
                             const Tensor& kw, const Tensor& kb, const Tensor& vw,
                             const Tensor& vb) {
  int h = v_feat.dim(0), w = v_feat.dim(1), c = v_feat.dim(2);
  int l = lang.dim(0);
  Tensor q = linear(v_feat.reshaped({h * w, c}), qw, qb);
  Tensor k = linear(lang, kw, kb);
  Tensor v = linear(lang, vw, vb);
  std::vector<uint8_t> allow(static_cast<size_t>(h) * w * l, 0);
  for (int i = 0; i < h * w; ++i)
    for (int j = 0; j < l; ++j) allow[static_cast<size_t>(i) * l + j] = mask[j];
  return masked_cross_attention(q, k, v, allow).reshaped({h, w, c});
}

struct CdaPassParams {
  Tensor qw, qb, kw, kb, vw, vb, pw, pb, fw, fb, ln_gain, ln_bias;
};

/// One dilated-attention pass recomputed by explicit gathering: every query
/// row pulls its slice columns at row offsets {0, +-d_j}, out-of-range rows
/// contribute zero vectors (they still occupy softmax slots).
inline Tensor cda_pass(const Tensor& query, const Tensor& joint, const DilationSpec& spec,
                       const CdaPassParams& p) {
  int ha = spec.h_adjust, c = query.dim(2);
  Tensor coords = coordinate_grid(ha);
  Tensor pos = linear(coords.reshaped({ha * ha, 2}), p.pw, p.pb);

  Tensor qin({ha * ha, c}), kin({ha * ha, c});
  for (int64_t i = 0; i < qin.size(); ++i) {
    qin[i] = query[i] + pos[i];
    kin[i] = joint[i] + pos[i];
  }
  Tensor q = linear(qin, p.qw, p.qb);
  Tensor k = linear(kin, p.kw, p.kb);
  Tensor v = linear(joint.reshaped({ha * ha, c}), p.vw, p.vb);

  std::vector<int> deltas{0};
  for (int d : spec.offsets) {
    deltas.push_back(d);
    deltas.push_back(-d);
  }

  Tensor attended({ha, ha, c});
  double inv = 1.0 / std::sqrt(static_cast<double>(c));
  for (int r = 0; r < ha; ++r)
    for (int col = 0; col < ha; ++col) {
      int ns = col / spec.slice_size;
      std::vector<double> scores;
      std::vector<std::pair<int, int>> sources;  // (row, col) or (-1,-1) for zero
      for (int delta : deltas)
        for (int s = 0; s < spec.slice_size; ++s) {
          int rr = r + delta;
          int cc = ns * spec.slice_size + s;
          double sc = 0;
          if (rr >= 0 && rr < ha) {
            for (int ch = 0; ch < c; ++ch)
              sc += q[(r * ha + col) * c + ch] * k[(rr * ha + cc) * c + ch];
            sources.emplace_back(rr, cc);
          } else {
            sources.emplace_back(-1, -1);  // zero key: score 0, zero value
          }
          scores.push_back(sc * inv);
        }
      softmax_inplace(scores);
      for (size_t t = 0; t < sources.size(); ++t) {
        auto [rr, cc] = sources[t];
        if (rr < 0) continue;
        for (int ch = 0; ch < c; ++ch)
          attended[(r * ha + col) * c + ch] += scores[t] * v[(rr * ha + cc) * c + ch];
      }
    }

  Tensor f = linear(attended.reshaped({ha * ha, c}), p.fw, p.fb);
  Tensor normed = layer_norm(f, p.ln_gain, p.ln_bias);
  Tensor out({ha, ha, c});
  for (int64_t i = 0; i < out.size(); ++i) out[i] = query[i] + normed[i];
  return out;
}

inline Tensor transpose_hw(const Tensor& x) {
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor y({w, h, c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) y[(static_cast<int64_t>(j) * h + i) * c + k] = x.at3(i, j, k);
  return y;
}

/// Vertical pass then transposed pass, matching CdaOperator::enhance.
inline Tensor cda_enhance(const Tensor& query, const Tensor& joint, const DilationSpec& spec,
                          const CdaPassParams& vertical, const CdaPassParams& transposed) {
  Tensor e1 = cda_pass(query, joint, spec, vertical);
  Tensor e2 = cda_pass(transpose_hw(e1), transpose_hw(joint), spec, transposed);
  return transpose_hw(e2);
}

/// Pixel-loop metric counts.
inline EvalRecord iou(const Raster& pred, const Raster& gt) {
  EvalRecord r;
  for (int y = 0; y < pred.h; ++y)
    for (int x = 0; x < pred.w; ++x) {
      bool p = pred.at(y, x) != 0;
      bool g = gt.at(y, x) != 0;
      if (p && g) ++r.intersection;
      if (p || g) ++r.union_count;
    }
  r.iou = r.union_count == 0 ? 1.0 : static_cast<double>(r.intersection) / r.union_count;
  return r;
}

}  // namespace crossview::oracle
