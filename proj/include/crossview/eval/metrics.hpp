#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossview/data/raster.hpp"

namespace crossview {

/// Per-sample pixel counts behind every metric. iou is defined as 1.0 when
/// both masks are empty (union == 0).
struct EvalRecord {
  std::string sample_id;
  int64_t intersection = 0;
  int64_t union_count = 0;
  double iou = 1.0;
  std::string category;
};

inline EvalRecord iou(const Raster& pred, const Raster& gt, std::string sample_id = "",
                      std::string category = "") {
  require(pred.c == 1 && gt.c == 1, "iou: masks must be single-channel");
  if (pred.h != gt.h || pred.w != gt.w)
    fail("iou: mask shapes differ (", pred.h, "x", pred.w, " vs ", gt.h, "x", gt.w, ")");
  EvalRecord r;
  r.sample_id = std::move(sample_id);
  r.category = std::move(category);
  for (size_t i = 0; i < pred.pix.size(); ++i) {
    bool p = pred.pix[i] != 0, g = gt.pix[i] != 0;
    r.intersection += p && g ? 1 : 0;
    r.union_count += p || g ? 1 : 0;
  }
  r.iou = r.union_count == 0 ? 1.0
                             : static_cast<double>(r.intersection) / static_cast<double>(r.union_count);
  return r;
}

/// Overall IoU: total intersection over total union (size-weighted).
inline double oiou(const std::vector<EvalRecord>& records) {
  require(!records.empty(), "oiou: empty record list");
  int64_t inter = 0, uni = 0;
  for (const auto& r : records) {
    inter += r.intersection;
    uni += r.union_count;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mean IoU: unweighted average of per-sample IoU.
inline double miou(const std::vector<EvalRecord>& records) {
  require(!records.empty(), "miou: empty record list");
  double s = 0.0;
  for (const auto& r : records) s += r.iou;
  return s / static_cast<double>(records.size());
}

/// Percentage of samples with IoU strictly above the threshold.
inline double precision_at(const std::vector<EvalRecord>& records, double threshold) {
  require(!records.empty(), "precision_at: empty record list");
  int64_t hits = 0;
  for (const auto& r : records) hits += r.iou > threshold ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

inline const std::vector<double>& precision_thresholds() {
  static const std::vector<double> t = {0.5, 0.6, 0.7, 0.8, 0.9};
  return t;
}

/// Structured metrics report: overall block, per-category mIoU, warnings for
/// empty buckets. Key order is deterministic.
inline nlohmann::ordered_json emit_report(const std::vector<EvalRecord>& records,
                                          const std::vector<std::string>& categories = {}) {
  require(!records.empty(), "emit_report: empty record list");
  nlohmann::ordered_json doc;
  nlohmann::ordered_json overall;
  for (double t : precision_thresholds()) {
    std::ostringstream key;
    key << "Pr@" << std::fixed << std::setprecision(1) << t;
    overall[key.str()] = precision_at(records, t);
  }
  overall["oIoU"] = oiou(records);
  overall["mIoU"] = miou(records);
  overall["samples"] = records.size();
  doc["overall"] = overall;

  std::vector<std::string> cats = categories;
  if (cats.empty()) {
    for (const auto& r : records)
      if (!r.category.empty() &&
          std::find(cats.begin(), cats.end(), r.category) == cats.end())
        cats.push_back(r.category);
    std::sort(cats.begin(), cats.end());
  }
  nlohmann::ordered_json per_cat;
  std::vector<std::string> warnings;
  for (const auto& c : cats) {
    std::vector<EvalRecord> bucket;
    for (const auto& r : records)
      if (r.category == c) bucket.push_back(r);
    if (bucket.empty()) {
      warnings.push_back("category '" + c + "' has no samples");
      continue;
    }
    nlohmann::ordered_json entry;
    entry["mIoU"] = miou(bucket);
    entry["samples"] = bucket.size();
    per_cat[c] = entry;
  }
  if (!per_cat.empty()) doc["per_category"] = per_cat;
  doc["warnings"] = warnings;
  return doc;
}

/// Fixed-width table in the conventional column order.
inline std::string format_metrics_table(const std::vector<EvalRecord>& records) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::setw(8) << "Pr@0.5" << std::setw(8) << "Pr@0.6" << std::setw(8) << "Pr@0.7"
     << std::setw(8) << "Pr@0.8" << std::setw(8) << "Pr@0.9" << std::setw(8) << "oIoU"
     << std::setw(8) << "mIoU" << "\n";
  for (double t : precision_thresholds()) os << std::setw(8) << precision_at(records, t);
  os << std::setw(8) << 100.0 * oiou(records) << std::setw(8) << 100.0 * miou(records) << "\n";
  return os.str();
}

}  // namespace crossview
