#pragma once

#include <string>
#include <vector>

#include "crossview/data/synth.hpp"
#include "crossview/decode/cdad.hpp"
#include "crossview/eval/metrics.hpp"
#include "crossview/model.hpp"

namespace crossview {

/// Samples with their network-ready view bundles prepared once.
struct Dataset {
  std::vector<synth::Sample> samples;
  std::vector<ViewBundle> bundles;

  size_t size() const { return bundles.size(); }
};

inline Dataset make_synth_dataset(uint64_t seed, const SynthSpec& spec, const ModelConfig& cfg) {
  Dataset ds;
  ds.samples.reserve(static_cast<size_t>(spec.samples));
  ds.bundles.reserve(static_cast<size_t>(spec.samples));
  for (int i = 0; i < spec.samples; ++i) {
    ds.samples.push_back(synth::generate_sample(mix_seed(seed, static_cast<uint64_t>(i)), spec));
    ds.bundles.push_back(prepare_views(ds.samples.back(), cfg));
  }
  return ds;
}

/// Loads a manifest of raster files into a dataset.
inline Dataset load_manifest_dataset(const std::string& manifest_path, const ModelConfig& cfg) {
  Dataset ds;
  for (const auto& e : read_manifest(manifest_path)) {
    synth::Sample s;
    s.image = read_image(e.image_path);
    s.mask = read_mask(e.mask_path);
    s.expression = e.expression;
    s.category = e.category;
    ds.samples.push_back(s);
    ds.bundles.push_back(prepare_views(ds.samples.back(), cfg));
  }
  require(!ds.bundles.empty(), "manifest has no entries: " + manifest_path);
  return ds;
}

/// Deterministic eval-mode pass over a dataset: per-sample IoU records.
inline std::vector<EvalRecord> evaluate_model(const Model& model, const Dataset& ds,
                                              double threshold) {
  NoGradGuard ng;
  std::vector<EvalRecord> records;
  for (size_t i = 0; i < ds.bundles.size(); ++i) {
    DecoderOutput out = model.forward(ds.bundles[i], /*training=*/false);
    Raster pred = predict_mask_raster(out.pred->value, threshold);
    Raster gt = ds.bundles[i].mask_full;
    records.push_back(iou(pred, gt, std::to_string(i), ds.samples[i].category));
  }
  return records;
}

}  // namespace crossview
