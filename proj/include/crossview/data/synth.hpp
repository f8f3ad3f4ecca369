#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crossview/config.hpp"
#include "crossview/core/rng.hpp"
#include "crossview/data/raster.hpp"

namespace crossview {

namespace synth {

inline const std::array<const char*, 5>& shape_names() {
  static const std::array<const char*, 5> n = {"circle", "square", "triangle", "cross", "ring"};
  return n;
}

inline const std::array<const char*, 8>& color_names() {
  static const std::array<const char*, 8> n = {"red",  "green",   "blue",   "yellow",
                                               "cyan", "magenta", "orange", "white"};
  return n;
}

inline const std::array<std::array<uint8_t, 3>, 8>& color_values() {
  static const std::array<std::array<uint8_t, 3>, 8> v = {{{220, 45, 45},
                                                           {50, 200, 70},
                                                           {55, 90, 230},
                                                           {230, 220, 55},
                                                           {60, 210, 210},
                                                           {210, 60, 210},
                                                           {240, 150, 45},
                                                           {240, 240, 240}}};
  return v;
}

inline const std::array<const char*, 3>& size_names() {
  static const std::array<const char*, 3> n = {"tiny", "medium", "large"};
  return n;
}

/// 3x3 position grid, row-major: top left .. bottom right.
inline const std::array<const char*, 9>& position_names() {
  static const std::array<const char*, 9> n = {"top left", "top",    "top right",
                                               "left",     "center", "right",
                                               "bottom left", "bottom", "bottom right"};
  return n;
}

struct ObjectMeta {
  int shape = 0;
  int color = 0;
  int size_cls = 0;  // 0 tiny, 1 medium, 2 large
  double cx = 0, cy = 0, radius = 0;
  int pos_tag = 0;
};

struct Sample {
  Raster image;  // 3-channel
  Raster mask;   // 1-channel {0,1}, exactly the target's pixels
  std::string expression;
  std::vector<ObjectMeta> objects;
  int target_index = 0;
  std::string category;    // shape name of the target
  std::string size_class;  // tiny / medium / large
};

inline int position_tag_of(double cx, double cy, int side) {
  auto band = [&](double v) {
    int b = static_cast<int>(3.0 * v / side);
    return std::min(std::max(b, 0), 2);
  };
  return band(cy) * 3 + band(cx);
}

inline bool inside_shape(int shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= r * 0.9 && std::abs(dy) <= r * 0.9;
    case 2:  // upward triangle
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.5;
    case 3:  // cross
      return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) ||
             (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
    case 4: {  // ring
      double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r);
    }
    default:
      return false;
  }
}

inline void rasterize(Raster& img, Raster* mask, const ObjectMeta& o) {
  const auto& rgb = color_values()[o.color];
  int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.radius - 1)));
  int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(o.cy + o.radius + 1)));
  int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.radius - 1)));
  int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(o.cx + o.radius + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_shape(o.shape, x + 0.5 - o.cx, y + 0.5 - o.cy, o.radius)) {
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
        if (mask) mask->at(y, x) = 1;
      }
}

// expression filters: -1 = unspecified
struct ExprFilter {
  int shape = -1, color = -1, size_cls = -1, pos_tag = -1;
  bool matches(const ObjectMeta& o) const {
    return (shape < 0 || o.shape == shape) && (color < 0 || o.color == color) &&
           (size_cls < 0 || o.size_cls == size_cls) && (pos_tag < 0 || o.pos_tag == pos_tag);
  }
};

/// Parses a templated expression back into attribute filters; the generator
/// self-check re-applies this to scene metadata.
inline ExprFilter parse_expression(const std::string& expr) {
  ExprFilter f;
  std::istringstream is(expr);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  auto find_idx = [](const auto& names, const std::string& word) {
    for (size_t i = 0; i < names.size(); ++i)
      if (word == names[i]) return static_cast<int>(i);
    return -1;
  };
  for (size_t i = 0; i < words.size(); ++i) {
    if (int s = find_idx(shape_names(), words[i]); s >= 0) f.shape = s;
    if (int c = find_idx(color_names(), words[i]); c >= 0) f.color = c;
    if (int z = find_idx(size_names(), words[i]); z >= 0) f.size_cls = z;
  }
  // position phrase: longest match over the tag vocabulary
  for (size_t i = 0; i < words.size(); ++i) {
    std::string two = i + 1 < words.size() ? words[i] + " " + words[i + 1] : "";
    for (size_t t = 0; t < position_names().size(); ++t) {
      const std::string tag = position_names()[t];
      if (tag == two) f.pos_tag = static_cast<int>(t);
    }
  }
  if (f.pos_tag < 0) {
    for (size_t i = 0; i < words.size(); ++i)
      for (size_t t = 0; t < position_names().size(); ++t)
        if (position_names()[t] == words[i]) f.pos_tag = static_cast<int>(t);
  }
  return f;
}

inline int count_matches(const ExprFilter& f, const std::vector<ObjectMeta>& objects) {
  int n = 0;
  for (const auto& o : objects) n += f.matches(o) ? 1 : 0;
  return n;
}

/// Builds the least specific uniquely-identifying expression for the target.
inline std::string build_expression(const std::vector<ObjectMeta>& objects, int target) {
  const ObjectMeta& t = objects[static_cast<size_t>(target)];
  std::string shape = shape_names()[t.shape];
  std::string color = color_names()[t.color];
  std::string size = size_names()[t.size_cls];
  std::string pos = position_names()[t.pos_tag];
  const std::array<std::pair<std::string, ExprFilter>, 4> candidates = {{
      {"the " + shape, {t.shape, -1, -1, -1}},
      {"the " + color + " " + shape, {t.shape, t.color, -1, -1}},
      {"the " + size + " " + color + " " + shape, {t.shape, t.color, t.size_cls, -1}},
      {"the " + size + " " + color + " " + shape + " in the " + pos,
       {t.shape, t.color, t.size_cls, t.pos_tag}},
  }};
  for (const auto& [text, filter] : candidates)
    if (count_matches(filter, objects) == 1) return text;
  fail("generation infeasible: no unique expression for target (duplicate attributes)");
}

inline std::pair<double, double> radius_range(int size_cls, int side) {
  switch (size_cls) {
    case 0: return {0.022 * side, 0.038 * side};
    case 1: return {0.06 * side, 0.09 * side};
    default: return {0.12 * side, 0.16 * side};
  }
}

/// Deterministic function of (seed, spec): a scene of 1..6 distinct objects,
/// a referring expression that matches exactly one of them, and that object's
/// pixel mask.
inline Sample generate_sample(uint64_t seed, const SynthSpec& spec) {
  for (const auto& v : validate_config(spec)) fail("synth spec invalid: ", v);
  Rng rng(mix_seed(seed, 0x5ee));
  const int side = spec.image_side;

  Sample s;
  s.image = Raster(side, side, 3);
  s.mask = Raster(side, side, 1);

  // background: dark gray with deterministic per-pixel noise
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      uint64_t h = mix_seed(seed, static_cast<uint64_t>(y) * 131071 + x);
      int noise = static_cast<int>(h % 13) - 6;
      for (int ch = 0; ch < 3; ++ch)
        s.image.at(y, x, ch) = static_cast<uint8_t>(std::clamp(42 + noise, 0, 255));
    }

  int n_objects = static_cast<int>(rng.integer(spec.min_objects, spec.max_objects));

  // forced attributes use -1 for "sample freely"; avoid_tag rejects one
  // position tag (used when planting a positional twin of the target)
  auto place = [&](int shape, int color, int size_cls, int avoid_tag) -> std::optional<ObjectMeta> {
    for (int attempt = 0; attempt < 300; ++attempt) {
      ObjectMeta o;
      o.shape = shape >= 0 ? shape : static_cast<int>(rng.integer(0, 4));
      o.color = color >= 0 ? color : static_cast<int>(rng.integer(0, 7));
      o.size_cls = size_cls >= 0 ? size_cls : static_cast<int>(rng.integer(0, 2));
      auto [rlo, rhi] = radius_range(o.size_cls, side);
      o.radius = std::max(3.0, rng.uniform(rlo, rhi));
      o.cx = rng.uniform(o.radius + 2, side - o.radius - 2);
      o.cy = rng.uniform(o.radius + 2, side - o.radius - 2);
      o.pos_tag = position_tag_of(o.cx, o.cy, side);
      bool ok = o.pos_tag != avoid_tag;
      for (const auto& other : s.objects) {
        double d = std::hypot(o.cx - other.cx, o.cy - other.cy);
        if (d < o.radius + other.radius + 0.02 * side) ok = false;
      }
      // keep the target uniquely describable: no two objects may share all
      // four attributes
      for (const auto& other : s.objects)
        if (other.shape == o.shape && other.color == o.color && other.size_cls == o.size_cls &&
            other.pos_tag == o.pos_tag)
          ok = false;
      if (ok) return o;
    }
    return std::nullopt;
  };

  // target first (size class forced by tiny_fraction), then distractors
  int target_size = rng.uniform(0.0, 1.0) < spec.tiny_fraction
                        ? 0
                        : static_cast<int>(rng.integer(1, 2));
  bool want_twin = n_objects >= 2 && rng.uniform(0.0, 1.0) < spec.position_fraction;
  auto target = place(-1, -1, target_size, -1);
  if (!target) fail("generation infeasible: cannot place target without overlap");
  s.objects.push_back(*target);
  int start = 1;
  if (want_twin) {
    // a same-attribute distractor elsewhere makes the expression positional
    auto twin = place(target->shape, target->color, target->size_cls, target->pos_tag);
    if (twin) {
      s.objects.push_back(*twin);
      start = 2;
    }
  }
  for (int i = start; i < n_objects; ++i) {
    auto obj = place(-1, -1, -1, -1);
    if (!obj)
      fail("generation infeasible: cannot place ", n_objects,
           " non-identical objects in a ", side, "px scene");
    s.objects.push_back(*obj);
  }
  s.target_index = 0;

  for (size_t i = 0; i < s.objects.size(); ++i)
    rasterize(s.image, i == 0 ? &s.mask : nullptr, s.objects[i]);

  s.expression = build_expression(s.objects, s.target_index);
  s.category = shape_names()[s.objects[0].shape];
  s.size_class = size_names()[s.objects[0].size_cls];

  // self-check: the expression must select exactly the masked object
  ExprFilter f = parse_expression(s.expression);
  require(count_matches(f, s.objects) == 1 && f.matches(s.objects[0]),
          "generator self-check failed: expression does not identify the target");
  return s;
}

}  // namespace synth

/// Dual-view network input for one sample: remote resize, close patch grid,
/// and the full-resolution supervision mask.
struct ViewBundle {
  Tensor remote;              // [H,W,3]
  std::vector<Tensor> close;  // n_view^2 patches of [H,W,3], row-major
  Raster mask_full;           // [n*H, n*W], values {0,1}
  std::string expression;
};

inline ViewBundle prepare_views(const synth::Sample& sample, const ModelConfig& cfg) {
  require(sample.image.c == 3, "prepare_views: image must be 3-channel");
  require(sample.mask.h == sample.image.h && sample.mask.w == sample.image.w,
          "prepare_views: mask/image size mismatch");
  const int h = cfg.input_side;
  const int n = cfg.n_view;
  ViewBundle vb;
  vb.expression = sample.expression;
  vb.remote = resize_bilinear_to_tensor(sample.image, h, h);
  Tensor close_full = resize_bilinear_to_tensor(sample.image, n * h, n * h);
  {
    NoGradGuard ng;
    Var tiles = split_grid(constant(std::move(close_full)), n);
    for (int i = 0; i < n * n; ++i) {
      Tensor t({h, h, 3});
      std::copy(tiles->value.data() + static_cast<int64_t>(i) * h * h * 3,
                tiles->value.data() + static_cast<int64_t>(i + 1) * h * h * 3, t.data());
      vb.close.push_back(std::move(t));
    }
  }
  vb.mask_full = resize_nearest(sample.mask, n * h, n * h);
  return vb;
}

// ---------------------------------------------------------------------------
// dataset manifest: image<TAB>mask<TAB>expression[<TAB>category]
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image_path, mask_path, expression, category;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open manifest: ", path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 3)
      fail("manifest line ", lineno, ": expected image<TAB>mask<TAB>expression");
    ManifestEntry e;
    e.image_path = cols[0];
    e.mask_path = cols[1];
    e.expression = cols[2];
    if (cols.size() > 3) e.category = cols[3];
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write manifest: ", path);
  for (const auto& e : entries) {
    out << e.image_path << '\t' << e.mask_path << '\t' << e.expression;
    if (!e.category.empty()) out << '\t' << e.category;
    out << '\n';
  }
}

}  // namespace crossview
