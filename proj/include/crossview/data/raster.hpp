#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "crossview/core/geometry.hpp"
#include "crossview/core/tensor.hpp"

namespace crossview {

/// 8-bit raster, row-major, interleaved channels (1 = mask/gray, 3 = RGB).
struct Raster {
  int h = 0, w = 0, c = 1;
  std::vector<uint8_t> pix;

  Raster() = default;
  Raster(int h_, int w_, int c_, uint8_t fill = 0)
      : h(h_), w(w_), c(c_), pix(static_cast<size_t>(h_) * w_ * c_, fill) {}

  uint8_t& at(int y, int x, int ch = 0) {
    return pix[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  uint8_t at(int y, int x, int ch = 0) const {
    return pix[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  size_t size() const { return pix.size(); }
};

namespace detail {

inline int next_pnm_int(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  in >> v;
  if (!in) fail("malformed raster header");
  return v;
}

inline Raster read_pnm(const std::string& path, int expect_channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open raster file: ", path);
  char p, n;
  in.get(p);
  in.get(n);
  if (p != 'P' || (n != '5' && n != '6')) fail("not a P5/P6 raster file: ", path);
  int channels = n == '5' ? 1 : 3;
  if (expect_channels == 1 && channels == 3)
    fail("mask must be single-channel: ", path);
  if (expect_channels == 3 && channels == 1)
    fail("image must be 3-channel: ", path);
  int w = next_pnm_int(in);
  int h = next_pnm_int(in);
  int maxv = next_pnm_int(in);
  if (maxv != 255) fail("unsupported maxval ", maxv, " in ", path);
  in.get();  // single whitespace before raster data
  Raster r(h, w, channels);
  in.read(reinterpret_cast<char*>(r.pix.data()), static_cast<std::streamsize>(r.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.size()))
    fail("truncated raster data in ", path);
  return r;
}

inline void write_pnm(const Raster& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write raster file: ", path);
  out << (r.c == 1 ? "P5" : "P6") << "\n" << r.w << " " << r.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pix.data()), static_cast<std::streamsize>(r.size()));
  if (!out) fail("short write to ", path);
}

}  // namespace detail

/// Reads a single-channel 8-bit raster as a binary mask; any nonzero pixel
/// is foreground.
inline Raster read_mask(const std::string& path) {
  Raster r = detail::read_pnm(path, 1);
  for (auto& v : r.pix) v = v ? 1 : 0;
  return r;
}

inline void write_mask(const Raster& mask, const std::string& path) {
  require(mask.c == 1, "write_mask: mask must be single-channel");
  Raster out(mask.h, mask.w, 1);
  for (size_t i = 0; i < mask.pix.size(); ++i) out.pix[i] = mask.pix[i] ? 255 : 0;
  detail::write_pnm(out, path);
}

inline Raster read_image(const std::string& path) { return detail::read_pnm(path, 3); }
inline void write_image(const Raster& img, const std::string& path) {
  require(img.c == 3, "write_image: image must be 3-channel");
  detail::write_pnm(img, path);
}

/// Raster -> [H,W,C] tensor scaled to [0,1].
inline Tensor raster_to_tensor(const Raster& r) {
  Tensor t({r.h, r.w, r.c});
  for (size_t i = 0; i < r.pix.size(); ++i) t[static_cast<int64_t>(i)] = r.pix[i] / 255.0;
  return t;
}

/// Nearest-neighbor raster resize; keeps masks binary.
inline Raster resize_nearest(const Raster& src, int out_h, int out_w) {
  Raster dst(out_h, out_w, src.c);
  for (int y = 0; y < out_h; ++y) {
    int sy = std::min(static_cast<int>((y + 0.5) * src.h / out_h), src.h - 1);
    for (int x = 0; x < out_w; ++x) {
      int sx = std::min(static_cast<int>((x + 0.5) * src.w / out_w), src.w - 1);
      for (int ch = 0; ch < src.c; ++ch) dst.at(y, x, ch) = src.at(sy, sx, ch);
    }
  }
  return dst;
}

/// Bilinear resize of a raster into a [H,W,C] tensor in [0,1].
inline Tensor resize_bilinear_to_tensor(const Raster& src, int out_h, int out_w) {
  Tensor t = raster_to_tensor(src);
  NoGradGuard ng;
  return resize_bilinear(constant(std::move(t)), out_h, out_w)->value;
}

}  // namespace crossview
