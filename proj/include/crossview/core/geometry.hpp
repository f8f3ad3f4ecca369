#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "crossview/core/autograd.hpp"

namespace crossview {

using ElementMap = std::shared_ptr<std::vector<int32_t>>;

namespace geom {

/// Maps are pure functions of their geometry; training repeats the same
/// shapes every step, so completed maps are memoized.
inline std::map<std::string, ElementMap>& map_cache() {
  static std::map<std::string, ElementMap> cache;
  return cache;
}

inline std::map<std::string, std::shared_ptr<PixelMap>>& pixel_map_cache() {
  static std::map<std::string, std::shared_ptr<PixelMap>> cache;
  return cache;
}

inline ElementMap cached(const std::string& key, const std::function<ElementMap()>& build) {
  auto& cache = map_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  ElementMap m = build();
  cache[key] = m;
  return m;
}

inline int64_t flat3(int i, int j, int k, int w, int c) {
  return (static_cast<int64_t>(i) * w + j) * c + k;
}

/// [H,W,C] -> [n_win*n_win, win, win, C], windows row-major.
inline ElementMap window_partition(int h, int w, int win, int c) {
  std::string key = "winpart:" + std::to_string(h) + "," + std::to_string(w) + "," +
                    std::to_string(win) + "," + std::to_string(c);
  return cached(key, [=] {
    require(h % win == 0 && w % win == 0, "window_partition: side not divisible by window");
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h) * w * c);
    int nwy = h / win, nwx = w / win;
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j)
            for (int k = 0; k < c; ++k)
              m->push_back(static_cast<int32_t>(flat3(wy * win + i, wx * win + j, k, w, c)));
    return m;
  });
}

/// Inverse of window_partition: [n_win*n_win, win, win, C] -> [H,W,C].
inline ElementMap window_merge(int h, int w, int win, int c) {
  std::string key = "winmerge:" + std::to_string(h) + "," + std::to_string(w) + "," +
                    std::to_string(win) + "," + std::to_string(c);
  return cached(key, [=] {
    require(h % win == 0 && w % win == 0, "window_merge: side not divisible by window");
    auto m = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(h) * w * c);
    int nwx = w / win;
    int64_t idx = 0;
    for (int wy = 0; wy < h / win; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j)
            for (int k = 0; k < c; ++k)
              (*m)[flat3(wy * win + i, wx * win + j, k, w, c)] = static_cast<int32_t>(idx++);
    return m;
  });
}

/// [H,W,C] -> [n*n, H/n, W/n, C] contiguous tiles, row-major.
inline ElementMap grid_split(int h, int w, int n, int c) {
  require(h % n == 0 && w % n == 0, "grid_split: side not divisible by grid");
  return window_partition(h, w, h / n, c);  // square tiles when h == w
}

inline ElementMap grid_assemble(int h, int w, int n, int c) {
  require(h % n == 0 && w % n == 0, "grid_assemble: side not divisible by grid");
  return window_merge(h, w, h / n, c);
}

/// [H,W,C] -> [n*n, H/n, W/n, C] strided sub-grids: sub (n1,n2) takes pixels
/// (n1 + i*n, n2 + j*n).
inline ElementMap patchify_strided(int h, int w, int n, int c) {
  std::string key = "patchify:" + std::to_string(h) + "," + std::to_string(w) + "," +
                    std::to_string(n) + "," + std::to_string(c);
  return cached(key, [=] {
    require(h % n == 0 && w % n == 0, "patchify: side not divisible by stride");
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h) * w * c);
    for (int n1 = 0; n1 < n; ++n1)
      for (int n2 = 0; n2 < n; ++n2)
        for (int i = 0; i < h / n; ++i)
          for (int j = 0; j < w / n; ++j)
            for (int k = 0; k < c; ++k)
              m->push_back(static_cast<int32_t>(flat3(n1 + i * n, n2 + j * n, k, w, c)));
    return m;
  });
}

/// Inverse of patchify_strided: [n*n, H/n, W/n, C] -> [H,W,C].
inline ElementMap regroup_strided(int h, int w, int n, int c) {
  std::string key = "regroup:" + std::to_string(h) + "," + std::to_string(w) + "," +
                    std::to_string(n) + "," + std::to_string(c);
  return cached(key, [=] {
    require(h % n == 0 && w % n == 0, "regroup: side not divisible by stride");
    auto m = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(h) * w * c);
    int64_t idx = 0;
    for (int n1 = 0; n1 < n; ++n1)
      for (int n2 = 0; n2 < n; ++n2)
        for (int i = 0; i < h / n; ++i)
          for (int j = 0; j < w / n; ++j)
            for (int k = 0; k < c; ++k)
              (*m)[flat3(n1 + i * n, n2 + j * n, k, w, c)] = static_cast<int32_t>(idx++);
    return m;
  });
}

/// [H,W,C] -> [W,H,C].
inline ElementMap transpose_hw(int h, int w, int c) {
  std::string key = "thw:" + std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(c);
  return cached(key, [=] {
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h) * w * c);
    for (int j = 0; j < w; ++j)
      for (int i = 0; i < h; ++i)
        for (int k = 0; k < c; ++k) m->push_back(static_cast<int32_t>(flat3(i, j, k, w, c)));
    return m;
  });
}

/// [H,W,C] -> [top+H+bottom, W, C] with zero rows outside.
inline ElementMap pad_rows(int h, int w, int c, int top, int bottom) {
  std::string key = "padrows:" + std::to_string(h) + "," + std::to_string(w) + "," +
                    std::to_string(c) + "," + std::to_string(top) + "," + std::to_string(bottom);
  return cached(key, [=] {
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(top + h + bottom) * w * c);
    for (int i = 0; i < top + h + bottom; ++i) {
      int si = i - top;
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < c; ++k)
          m->push_back(si >= 0 && si < h ? static_cast<int32_t>(flat3(si, j, k, w, c)) : -1);
    }
    return m;
  });
}

/// Dilated key bank from a vertically padded tensor [3*Ha, Ha, C]:
/// output (r, slice, b*S + s, ch) reads padded row Ha + r + delta_b of slice
/// column slice*S + s, with deltas [0, +d0, -d0, +d1, -d1, ...].
inline ElementMap dilated_bank(int h_adjust, int n_slice, int s_slice,
                               const std::vector<int>& offsets, int c) {
  std::string key = "bank:" + std::to_string(h_adjust) + "," + std::to_string(n_slice) + "," +
                    std::to_string(s_slice) + "," + std::to_string(c);
  for (int d : offsets) key += ":" + std::to_string(d);
  return cached(key, [=] {
    std::vector<int> deltas{0};
    for (int d : offsets) {
      deltas.push_back(d);
      deltas.push_back(-d);
    }
    int w = n_slice * s_slice;
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h_adjust) * n_slice * deltas.size() * s_slice * c);
    for (int r = 0; r < h_adjust; ++r)
      for (int ns = 0; ns < n_slice; ++ns)
        for (int delta : deltas)
          for (int s = 0; s < s_slice; ++s)
            for (int k = 0; k < c; ++k)
              m->push_back(static_cast<int32_t>(flat3(h_adjust + r + delta, ns * s_slice + s, k, w, c)));
    return m;
  });
}

/// [A,B,C] -> [B,A,C] leading-axis swap (multi-head packing).
inline ElementMap swap01(int a, int b, int c) {
  std::string key = "swap01:" + std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(c);
  return cached(key, [=] {
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(a) * b * c);
    for (int j = 0; j < b; ++j)
      for (int i = 0; i < a; ++i)
        for (int k = 0; k < c; ++k)
          m->push_back(static_cast<int32_t>((static_cast<int64_t>(i) * b + j) * c + k));
    return m;
  });
}

/// im2col for a 3x3 stride-1 pad-1 convolution: [H,W,C] -> [H*W, 9*C].
inline ElementMap im2col_3x3(int h, int w, int c) {
  std::string key = "im2col3:" + std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(c);
  return cached(key, [=] {
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h) * w * 9 * c);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx)
            for (int k = 0; k < c; ++k) {
              int si = i + ky, sj = j + kx;
              m->push_back(si >= 0 && si < h && sj >= 0 && sj < w
                               ? static_cast<int32_t>(flat3(si, sj, k, w, c))
                               : -1);
            }
    return m;
  });
}

/// Non-overlapping k x k patch flattening: [H,W,C] -> [H/k, W/k, k*k*C].
inline ElementMap space_to_depth(int h, int w, int k, int c) {
  std::string key = "s2d:" + std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(k) +
                    "," + std::to_string(c);
  return cached(key, [=] {
    require(h % k == 0 && w % k == 0, "space_to_depth: side not divisible by patch");
    auto m = std::make_shared<std::vector<int32_t>>();
    m->reserve(static_cast<size_t>(h) * w * c);
    for (int i = 0; i < h / k; ++i)
      for (int j = 0; j < w / k; ++j)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            for (int ch = 0; ch < c; ++ch)
              m->push_back(static_cast<int32_t>(flat3(i * k + dy, j * k + dx, ch, w, c)));
    return m;
  });
}

/// Bilinear interpolation weights with half-pixel centers; reduces to the
/// identity map when sizes match.
inline std::shared_ptr<PixelMap> bilinear(int in_h, int in_w, int out_h, int out_w) {
  std::string key = "bilin:" + std::to_string(in_h) + "," + std::to_string(in_w) + "," +
                    std::to_string(out_h) + "," + std::to_string(out_w);
  auto& cache = pixel_map_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  auto pm = std::make_shared<PixelMap>();
  pm->in_pixels = in_h * in_w;
  pm->out_pixels = out_h * out_w;
  pm->offsets.push_back(0);
  double sy = static_cast<double>(in_h) / out_h;
  double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy1 = fy - y0;
    int y0c = std::min(std::max(y0, 0), in_h - 1);
    int y1c = std::min(std::max(y0 + 1, 0), in_h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx1 = fx - x0;
      int x0c = std::min(std::max(x0, 0), in_w - 1);
      int x1c = std::min(std::max(x0 + 1, 0), in_w - 1);
      double w00 = (1.0 - wy1) * (1.0 - wx1);
      double w01 = (1.0 - wy1) * wx1;
      double w10 = wy1 * (1.0 - wx1);
      double w11 = wy1 * wx1;
      // accumulate duplicate taps (edge clamping) into single entries
      std::map<int32_t, double> taps;
      if (w00 != 0.0) taps[y0c * in_w + x0c] += w00;
      if (w01 != 0.0) taps[y0c * in_w + x1c] += w01;
      if (w10 != 0.0) taps[y1c * in_w + x0c] += w10;
      if (w11 != 0.0) taps[y1c * in_w + x1c] += w11;
      for (const auto& [src, wt] : taps) {
        pm->src.push_back(src);
        pm->w.push_back(wt);
      }
      pm->offsets.push_back(static_cast<int32_t>(pm->src.size()));
    }
  }
  cache[key] = pm;
  return pm;
}

}  // namespace geom

// Convenience wrappers on [H,W,C] (and [B,H,W,C]) tensors.

inline Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require(x->value.rank() == 3, "resize_bilinear: expected [H,W,C]");
  int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (h == out_h && w == out_w) return x;
  auto pm = geom::bilinear(h, w, out_h, out_w);
  Var flat = reshape(x, {h * w, c});
  return reshape(pixel_map_apply(flat, pm), {out_h, out_w, c});
}

inline Var resize_bilinear_batched(const Var& x, int out_h, int out_w) {
  require(x->value.rank() == 4, "resize_bilinear_batched: expected [B,H,W,C]");
  int b = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
  if (h == out_h && w == out_w) return x;
  auto pm = geom::bilinear(h, w, out_h, out_w);
  Var flat = reshape(x, {b, h * w, c});
  return reshape(pixel_map_apply_batched(flat, pm), {b, out_h, out_w, c});
}

/// [H,W,C] -> [n*n, H/n, W/n, C] contiguous tiles; exact inverse pair.
inline Var split_grid(const Var& x, int n) {
  require(x->value.rank() == 3, "split_grid: expected [H,W,C]");
  int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  if (h % n != 0 || w % n != 0)
    fail("split_grid: side ", h, "x", w, " not divisible by ", n);
  auto m = geom::grid_split(h, w, n, c);
  return element_gather(x, m, {n * n, h / n, w / n, c});
}

inline Var assemble_grid(const Var& tiles) {
  require(tiles->value.rank() == 4, "assemble_grid: expected [n*n,h,w,C]");
  int nn = tiles->value.dim(0), th = tiles->value.dim(1), tw = tiles->value.dim(2),
      c = tiles->value.dim(3);
  int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nn))));
  require(n * n == nn, "assemble_grid: tile count must be a square");
  auto m = geom::grid_assemble(th * n, tw * n, n, c);
  return element_gather(tiles, m, {th * n, tw * n, c});
}

inline Var transpose_spatial(const Var& x) {
  require(x->value.rank() == 3, "transpose_spatial: expected [H,W,C]");
  int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  return element_gather(x, geom::transpose_hw(h, w, c), {w, h, c});
}

}  // namespace crossview
