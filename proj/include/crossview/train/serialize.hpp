#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossview/model.hpp"
#include "crossview/train/optim.hpp"

namespace crossview {

// Flat named-array archive: a text magic line, an 8-byte little-endian
// header length, a JSON header (configs, step, seed, array table), then the
// raw doubles. Raw bytes round-trip bitwise.

inline const char* kCheckpointMagic = "CROSSVIEW-CKPT v1\n";

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["input_side"] = m.input_side;
  j["n_view"] = m.n_view;
  j["stage_channels"] = m.stage_channels;
  j["lang_dim"] = m.lang_dim;
  j["lang_len"] = m.lang_len;
  j["win_size"] = m.win_size;
  j["slice_size"] = m.slice_size;
  j["dilation_density"] = m.dilation_density;
  j["cmp_channels"] = m.cmp_channels;
  j["heads"] = m.heads;
  j["seed"] = m.seed;
  j["exchange_proj"] = m.exchange_proj;
  j["use_pos_embed"] = m.use_pos_embed;
  j["bn_track_stats"] = m.bn_track_stats;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.input_side = j.at("input_side");
  m.n_view = j.at("n_view");
  for (int i = 0; i < 4; ++i) m.stage_channels[static_cast<size_t>(i)] = j.at("stage_channels")[static_cast<size_t>(i)];
  m.lang_dim = j.at("lang_dim");
  m.lang_len = j.at("lang_len");
  m.win_size = j.at("win_size");
  m.slice_size = j.at("slice_size");
  m.dilation_density = j.at("dilation_density");
  m.cmp_channels = j.at("cmp_channels");
  m.heads = j.at("heads");
  m.seed = j.at("seed");
  m.exchange_proj = j.at("exchange_proj");
  m.use_pos_embed = j.at("use_pos_embed");
  m.bn_track_stats = j.value("bn_track_stats", false);
  return m;
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["poly_power"] = t.poly_power;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["dice_weight"] = t.dice_weight;
  j["bce_weight"] = t.bce_weight;
  j["threshold"] = t.threshold;
  j["max_steps"] = t.max_steps;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.lr = j.at("lr");
  t.weight_decay = j.at("weight_decay");
  t.poly_power = j.at("poly_power");
  t.epochs = j.at("epochs");
  t.batch_size = j.at("batch_size");
  t.dice_weight = j.at("dice_weight");
  t.bce_weight = j.at("bce_weight");
  t.threshold = j.at("threshold");
  t.max_steps = j.at("max_steps");
  return t;
}

inline nlohmann::ordered_json switches_to_json(const AblationSwitches& a) {
  auto view = [&] {
    switch (a.view_mode) {
      case ViewMode::full: return "full";
      case ViewMode::only_close: return "only_close";
      case ViewMode::only_remote: return "only_remote";
    }
    return "full";
  };
  auto exch = [&] {
    switch (a.exchange_mode) {
      case ExchangeMode::bidirectional: return "bidirectional";
      case ExchangeMode::remote2close: return "remote2close";
      case ExchangeMode::close2remote: return "close2remote";
      case ExchangeMode::none: return "none";
    }
    return "bidirectional";
  };
  auto var = [&] {
    switch (a.variant) {
      case CvwinVariant::cvwin: return "cvwin";
      case CvwinVariant::pwam_stub: return "pwam_stub";
      case CvwinVariant::iim_stub: return "iim_stub";
      case CvwinVariant::direct_sum: return "direct_sum";
      case CvwinVariant::no_gate: return "no_gate";
    }
    return "cvwin";
  };
  auto trunc = [&] {
    switch (a.truncate) {
      case DecoderTruncate::none: return "none";
      case DecoderTruncate::d4: return "d4";
      case DecoderTruncate::d4d3: return "d4d3";
      case DecoderTruncate::d4d3d2: return "d4d3d2";
    }
    return "none";
  };
  nlohmann::ordered_json j;
  j["view_mode"] = view();
  j["exchange_mode"] = exch();
  j["cvwin_variant"] = var();
  j["decoder_truncate"] = trunc();
  j["cda_enabled"] = a.cda_enabled;
  j["skip_enabled"] = a.skip_enabled;
  return j;
}

inline AblationSwitches switches_from_json(const nlohmann::json& j) {
  AblationSwitches a;
  a.view_mode = parse_view_mode(j.at("view_mode"));
  a.exchange_mode = parse_exchange_mode(j.at("exchange_mode"));
  a.variant = parse_cvwin_variant(j.at("cvwin_variant"));
  a.truncate = parse_decoder_truncate(j.at("decoder_truncate"));
  a.cda_enabled = j.at("cda_enabled");
  a.skip_enabled = j.at("skip_enabled");
  return a;
}

inline void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                            int64_t step, const TrainConfig* tcfg = nullptr) {
  nlohmann::ordered_json header;
  header["model"] = model_config_to_json(model.cfg);
  if (tcfg) header["train"] = train_config_to_json(*tcfg);
  header["ablation"] = switches_to_json(model.ab);
  header["step"] = step;
  header["seed"] = model.cfg.seed;
  header["vocab"] = model.vocab.words;
  if (opt) header["opt_t"] = opt->t;

  std::vector<const Tensor*> blobs;
  nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
  int64_t offset = 0;
  auto add_array = [&](const std::string& name, const Tensor& t) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    arrays.push_back(e);
    blobs.push_back(&t);
    offset += t.size();
  };
  for (const auto& [name, p] : model.reg.params()) add_array("param/" + name, p->value);
  for (const auto& [name, b] : model.reg.buffers()) add_array("buffer/" + name, *b);
  if (opt) {
    size_t i = 0;
    for (const auto& [name, p] : model.reg.params()) {
      add_array("opt.m/" + name, opt->m()[i]);
      add_array("opt.v/" + name, opt->v()[i]);
      ++i;
    }
  }
  header["arrays"] = arrays;

  std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write checkpoint: ", path);
  out.write(kCheckpointMagic, static_cast<std::streamsize>(std::string(kCheckpointMagic).size()));
  uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(hlen));
  for (const Tensor* t : blobs)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) fail("short write to checkpoint: ", path);
}

struct CheckpointData {
  nlohmann::json header;
  std::map<std::string, Tensor> arrays;

  int64_t step() const { return header.at("step"); }
};

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: ", path);
  std::string magic(std::string(kCheckpointMagic).size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) fail("not a checkpoint file: ", path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail("truncated checkpoint header: ", path);
  CheckpointData ck;
  ck.header = nlohmann::json::parse(header_str);
  for (const auto& e : ck.header.at("arrays")) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) fail("truncated checkpoint data at ", e.at("name").get<std::string>());
    ck.arrays[e.at("name")] = std::move(t);
  }
  return ck;
}

/// Builds a model whose config, switches, and vocabulary come from the
/// checkpoint header, then fills parameters and buffers.
inline std::unique_ptr<Model> model_from_checkpoint(const CheckpointData& ck) {
  ModelConfig cfg = model_config_from_json(ck.header.at("model"));
  AblationSwitches ab = switches_from_json(ck.header.at("ablation"));
  Vocab vocab = Vocab::from_words(ck.header.at("vocab").get<std::vector<std::string>>());
  auto model = std::make_unique<Model>(cfg, std::move(vocab), ab);
  for (const auto& [name, p] : model->reg.params()) {
    auto it = ck.arrays.find("param/" + name);
    if (it == ck.arrays.end()) fail("checkpoint missing parameter: ", name);
    require(it->second.same_shape(p->value), "checkpoint shape mismatch for " + name);
    std::copy(it->second.data(), it->second.data() + it->second.size(), p->value.data());
  }
  for (const auto& [name, b] : model->reg.buffers()) {
    auto it = ck.arrays.find("buffer/" + name);
    if (it == ck.arrays.end()) fail("checkpoint missing buffer: ", name);
    std::copy(it->second.data(), it->second.data() + it->second.size(), b->data());
  }
  return model;
}

inline void load_optimizer(AdamW& opt, const Model& model, const CheckpointData& ck) {
  require(ck.header.contains("opt_t"), "checkpoint has no optimizer state");
  opt.t = ck.header.at("opt_t");
  size_t i = 0;
  for (const auto& [name, p] : model.reg.params()) {
    auto mi = ck.arrays.find("opt.m/" + name);
    auto vi = ck.arrays.find("opt.v/" + name);
    require(mi != ck.arrays.end() && vi != ck.arrays.end(),
            "checkpoint missing optimizer arrays for " + name);
    opt.m()[i] = mi->second.clone();
    opt.v()[i] = vi->second.clone();
    ++i;
  }
}

}  // namespace crossview
