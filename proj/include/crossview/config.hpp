#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crossview/core/tensor.hpp"

namespace crossview {

/// Model geometry and width settings. Immutable once validated; every module
/// reads channel widths and sides from here rather than hard-coding them.
struct ModelConfig {
  int input_side = 384;          // H = W
  int n_view = 2;                // close-view grid factor
  std::array<int, 4> stage_channels = {32, 64, 128, 256};
  int lang_dim = 64;
  int lang_len = 20;
  int win_size = 4;              // window side for the cross-view exchange
  int slice_size = 5;            // dilated-attention slice width
  int dilation_density = 3;      // J
  int cmp_channels = 0;          // 0 = stage_channels[3] / 2
  int heads = 1;
  uint64_t seed = 0;
  bool exchange_proj = false;    // optional learned q/k/v maps in the exchange
  bool use_pos_embed = true;     // token position embedding in the text encoder
  bool bn_track_stats = false;   // eval-time batch norm from running averages

  int cmp() const { return cmp_channels > 0 ? cmp_channels : stage_channels[3] / 2; }
  /// Side of stage i feature (i in 1..4): input_side / 2^(i+1).
  int stage_side(int i) const { return input_side / (1 << (i + 1)); }
  int supervision_side() const { return n_view * input_side; }
};

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int epochs = 10;
  int batch_size = 4;
  double dice_weight = 0.9;
  double bce_weight = 0.1;
  double threshold = 0.5;
  int max_steps = 0;             // 0 = epochs * ceil(samples / batch_size)
};

/// Scene recipe for the synthetic generator.
struct SynthSpec {
  int image_side = 800;
  int min_objects = 2;
  int max_objects = 5;
  double tiny_fraction = 0.34;     // probability the referred target is tiny
  double position_fraction = 0.35; // probability a same-attribute distractor
                                   // forces the expression to use a position tag
  int samples = 16;
};

inline std::vector<std::string> validate_config(const ModelConfig& cfg) {
  std::vector<std::string> v;
  if (cfg.input_side <= 0 || cfg.input_side % 32 != 0) v.push_back("H mod 32 != 0");
  if (cfg.n_view < 1) v.push_back("n_view must be >= 1");
  if (cfg.dilation_density < 1) v.push_back("dilation_density must be >= 1");
  if (cfg.slice_size < 1) v.push_back("slice_size must be >= 1");
  if (cfg.win_size < 1) v.push_back("win_size must be >= 1");
  if (cfg.cmp() < 1) v.push_back("cmp_channels must be >= 1");
  for (int i = 0; i < 3; ++i)
    if (cfg.stage_channels[i] >= cfg.stage_channels[i + 1]) {
      v.push_back("stage channels must be strictly increasing");
      break;
    }
  for (int c : cfg.stage_channels)
    if (c < 1) {
      v.push_back("stage channels must be positive");
      break;
    }
  if (cfg.lang_dim < 1) v.push_back("lang_dim must be >= 1");
  if (cfg.lang_len < 1) v.push_back("lang_len must be >= 1");
  if (cfg.heads < 1) v.push_back("heads must be >= 1");
  else {
    for (int c : cfg.stage_channels)
      if (c % cfg.heads != 0) {
        v.push_back("heads must divide every stage channel width");
        break;
      }
    if (cfg.lang_dim % cfg.heads != 0) v.push_back("heads must divide lang_dim");
  }
  return v;
}

inline std::vector<std::string> validate_config(const TrainConfig& cfg) {
  std::vector<std::string> v;
  if (std::abs(cfg.dice_weight + cfg.bce_weight - 1.0) > 1e-12)
    v.push_back("weights do not sum to 1");
  if (!(cfg.lr > 0)) v.push_back("lr must be > 0");
  if (cfg.batch_size < 1) v.push_back("batch_size must be >= 1");
  if (cfg.epochs < 1 && cfg.max_steps < 1) v.push_back("epochs or max_steps must be >= 1");
  if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) v.push_back("threshold must be in [0,1]");
  if (!(cfg.poly_power >= 0.0)) v.push_back("poly_power must be >= 0");
  return v;
}

inline std::vector<std::string> validate_config(const SynthSpec& s) {
  std::vector<std::string> v;
  if (s.image_side < 32) v.push_back("synth image_side must be >= 32");
  if (s.min_objects < 1 || s.max_objects < s.min_objects)
    v.push_back("synth object count range invalid");
  if (s.max_objects > 6) v.push_back("synth max_objects must be <= 6");
  if (!(s.tiny_fraction >= 0.0 && s.tiny_fraction <= 1.0))
    v.push_back("synth tiny_fraction must be in [0,1]");
  if (!(s.position_fraction >= 0.0 && s.position_fraction <= 1.0))
    v.push_back("synth position_fraction must be in [0,1]");
  if (s.samples < 1) v.push_back("synth samples must be >= 1");
  return v;
}

// ---------------------------------------------------------------------------
// flat key = value config files; '#' starts a comment
// ---------------------------------------------------------------------------

using KvMap = std::map<std::string, std::string>;

inline KvMap parse_config_text(std::istream& in) {
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r\n");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t\r\n");
      return s.substr(a, b - a + 1);
    };
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (eq == std::string::npos)
      fail("config line ", lineno, ": expected key = value, got '", stripped, "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) fail("config line ", lineno, ": empty key");
    kv[key] = val;
  }
  return kv;
}

inline KvMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: ", path);
  return parse_config_text(in);
}

namespace detail {
inline int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config key '", key, "': expected integer, got '", v, "'");
  }
}
inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config key '", key, "': expected number, got '", v, "'");
  }
}
inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  fail("config key '", key, "': expected boolean, got '", v, "'");
}
}  // namespace detail

/// Applies flat key/value settings onto the three config structs. Unknown
/// keys are an error so typos surface immediately.
inline void apply_config(const KvMap& kv, ModelConfig& m, TrainConfig& t, SynthSpec& s) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  for (const auto& [k, v] : kv) {
    if (k == "input_side") m.input_side = to_int(k, v);
    else if (k == "n_view") m.n_view = to_int(k, v);
    else if (k == "c1") m.stage_channels[0] = to_int(k, v);
    else if (k == "c2") m.stage_channels[1] = to_int(k, v);
    else if (k == "c3") m.stage_channels[2] = to_int(k, v);
    else if (k == "c4") m.stage_channels[3] = to_int(k, v);
    else if (k == "lang_dim") m.lang_dim = to_int(k, v);
    else if (k == "lang_len") m.lang_len = to_int(k, v);
    else if (k == "win_size") m.win_size = to_int(k, v);
    else if (k == "slice_size") m.slice_size = to_int(k, v);
    else if (k == "dilation_density") m.dilation_density = to_int(k, v);
    else if (k == "cmp_channels") m.cmp_channels = to_int(k, v);
    else if (k == "heads") m.heads = to_int(k, v);
    else if (k == "seed") m.seed = static_cast<uint64_t>(to_int(k, v));
    else if (k == "exchange_proj") m.exchange_proj = to_bool(k, v);
    else if (k == "use_pos_embed") m.use_pos_embed = to_bool(k, v);
    else if (k == "bn_track_stats") m.bn_track_stats = to_bool(k, v);
    else if (k == "lr") t.lr = to_double(k, v);
    else if (k == "weight_decay") t.weight_decay = to_double(k, v);
    else if (k == "poly_power") t.poly_power = to_double(k, v);
    else if (k == "epochs") t.epochs = to_int(k, v);
    else if (k == "batch_size") t.batch_size = to_int(k, v);
    else if (k == "dice_weight") t.dice_weight = to_double(k, v);
    else if (k == "bce_weight") t.bce_weight = to_double(k, v);
    else if (k == "threshold") t.threshold = to_double(k, v);
    else if (k == "max_steps") t.max_steps = to_int(k, v);
    else if (k == "synth_image_side") s.image_side = to_int(k, v);
    else if (k == "synth_min_objects") s.min_objects = to_int(k, v);
    else if (k == "synth_max_objects") s.max_objects = to_int(k, v);
    else if (k == "synth_tiny_fraction") s.tiny_fraction = to_double(k, v);
    else if (k == "synth_position_fraction") s.position_fraction = to_double(k, v);
    else if (k == "synth_samples") s.samples = to_int(k, v);
    else fail("unknown config key: ", k);
  }
}

}  // namespace crossview
