#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "crossview/eval/evaluate.hpp"
#include "crossview/train/loss.hpp"
#include "crossview/train/optim.hpp"
#include "crossview/train/serialize.hpp"

namespace crossview {

struct TrainAbort : Error {
  explicit TrainAbort(const std::string& msg) : Error(msg) {}
};

struct StepLog {
  int64_t step = 0;
  double lr = 0, total = 0, dice = 0, bce = 0, wall_ms = 0;
};

struct TrainOptions {
  std::string out_dir;        // empty = keep everything in memory
  bool save_checkpoints = true;
  bool verbose = false;
  int log_every = 1;
  int64_t stop_after = 0;     // pause after this step (0 = run to schedule end)
};

struct TrainSummary {
  std::vector<StepLog> log;
  double best_miou = -1.0;
  int64_t best_step = -1;
  int64_t total_steps = 0;
  double final_train_miou = -1.0;
};

inline int64_t planned_total_steps(const TrainConfig& tcfg, size_t n_samples) {
  if (tcfg.max_steps > 0) return tcfg.max_steps;
  int64_t per_epoch = (static_cast<int64_t>(n_samples) + tcfg.batch_size - 1) / tcfg.batch_size;
  return per_epoch * tcfg.epochs;
}

/// Deterministic sample order: each epoch is a seeded shuffle, and the
/// position within it derives from the step index alone (resume-safe).
inline std::vector<size_t> epoch_order(uint64_t seed, int64_t epoch, size_t n) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(mix_seed(seed, 0xe9 + static_cast<uint64_t>(epoch)));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

inline void write_loss_csv(const std::string& path, const std::vector<StepLog>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write loss log: ", path);
  out << "step,lr,total,dice,bce,wall_ms\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.step << "," << r.lr << "," << r.total << "," << r.dice << "," << r.bce << ","
        << r.wall_ms << "\n";
}

/// AdamW + polynomial decay over a fixed dataset. Losses average over the
/// batch via gradient accumulation; a non-finite loss aborts with a
/// diagnostic dump. Returns the per-step log.
inline TrainSummary train_model(Model& model, const TrainConfig& tcfg, const Dataset& train_set,
                                const Dataset* val_set, AdamW& opt, int64_t start_step = 0,
                                const TrainOptions& opts = {}) {
  for (const auto& v : validate_config(tcfg)) fail("invalid train config: ", v);
  require(!train_set.bundles.empty(), "train_model: empty dataset");

  TrainSummary summary;
  summary.total_steps = planned_total_steps(tcfg, train_set.size());
  const int64_t total = summary.total_steps;
  const size_t n = train_set.size();
  const int64_t batches_per_epoch =
      (static_cast<int64_t>(n) + tcfg.batch_size - 1) / tcfg.batch_size;

  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  const Dataset& val = val_set ? *val_set : train_set;
  int64_t last_epoch_saved = -1;
  int64_t stop = opts.stop_after > 0 ? std::min(opts.stop_after, total) : total;

  for (int64_t step = start_step; step < stop; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = poly_lr(tcfg.lr, step, total, tcfg.poly_power);
    int64_t epoch = step / batches_per_epoch;
    int64_t batch_idx = step % batches_per_epoch;
    std::vector<size_t> order = epoch_order(model.cfg.seed, epoch, n);

    model.reg.zero_grad();
    double total_l = 0, dice_l = 0, bce_l = 0;
    int count = 0;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      size_t pos = static_cast<size_t>(batch_idx) * tcfg.batch_size + static_cast<size_t>(b);
      if (pos >= n) break;
      const ViewBundle& bundle = train_set.bundles[order[pos]];
      DecoderOutput out = model.forward(bundle, /*training=*/true);
      LossParts parts =
          total_loss(out.pred, bundle.mask_full, tcfg.dice_weight, tcfg.bce_weight);
      total_l += parts.total->value[0];
      dice_l += parts.dice->value[0];
      bce_l += parts.bce->value[0];
      ++count;
      backward(parts.total);
    }
    require(count > 0, "train_model: empty batch");
    // average accumulated gradients over the batch
    for (const auto& [name, p] : model.reg.params())
      if (!p->grad.empty())
        for (int64_t j = 0; j < p->grad.size(); ++j) p->grad[j] /= count;

    StepLog row;
    row.step = step;
    row.lr = lr;
    row.total = total_l / count;
    row.dice = dice_l / count;
    row.bce = bce_l / count;

    if (!std::isfinite(row.total)) {
      std::string dump;
      dump += "non-finite loss at step " + std::to_string(step) + "\n";
      dump += "lr=" + std::to_string(lr) + " dice=" + std::to_string(row.dice) +
              " bce=" + std::to_string(row.bce) + "\n";
      for (const auto& [name, p] : model.reg.params()) {
        double mx = 0;
        for (int64_t j = 0; j < p->value.size(); ++j) mx = std::max(mx, std::abs(p->value[j]));
        dump += name + " max|theta|=" + std::to_string(mx) + "\n";
      }
      if (!opts.out_dir.empty()) {
        std::ofstream d(opts.out_dir + "/nan_dump.txt");
        d << dump;
      }
      throw TrainAbort(dump);
    }

    opt.step(model.reg, lr);
    auto t1 = std::chrono::steady_clock::now();
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    summary.log.push_back(row);
    if (opts.verbose && step % opts.log_every == 0)
      std::fprintf(stderr, "step %lld lr %.3e total %.4f dice %.4f bce %.4f\n",
                   static_cast<long long>(step), lr, row.total, row.dice, row.bce);

    bool epoch_end = (step + 1) % batches_per_epoch == 0 || step + 1 == total;
    if (epoch_end && epoch != last_epoch_saved) {
      last_epoch_saved = epoch;
      auto records = evaluate_model(model, val, tcfg.threshold);
      double m = miou(records);
      if (m > summary.best_miou) {
        summary.best_miou = m;
        summary.best_step = step + 1;
        if (!opts.out_dir.empty() && opts.save_checkpoints)
          save_checkpoint(opts.out_dir + "/best.ckpt", model, &opt, step + 1, &tcfg);
      }
      if (!opts.out_dir.empty() && opts.save_checkpoints)
        save_checkpoint(opts.out_dir + "/epoch_" + std::to_string(epoch) + ".ckpt", model, &opt,
                        step + 1, &tcfg);
    }
  }

  if (!opts.out_dir.empty()) write_loss_csv(opts.out_dir + "/loss.csv", summary.log);
  auto records = evaluate_model(model, train_set, tcfg.threshold);
  summary.final_train_miou = miou(records);
  return summary;
}

}  // namespace crossview
