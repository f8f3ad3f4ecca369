// Command-line harness: training, evaluation, prediction, gradient checking,
// oracle verification, ablation wiring, and synthetic dataset export.
//
// Exit codes: 0 success, 1 generic error, 2 invalid configuration,
// 3 missing input file, 4 non-finite loss during training,
// 5 verification failure (gradcheck/oracle).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "crossview/crossview.hpp"
#include "crossview/eval/gradsuite.hpp"
#include "crossview/eval/oraclesuite.hpp"

namespace fs = std::filesystem;
using namespace crossview;

namespace {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "input_side",     "n_view",           "c1",
      "c2",             "c3",               "c4",
      "lang_dim",       "lang_len",         "win_size",
      "slice_size",     "dilation_density", "cmp_channels",
      "heads",          "seed",             "exchange_proj",
      "use_pos_embed",  "bn_track_stats",   "lr",
      "weight_decay",
      "poly_power",     "epochs",           "batch_size",
      "dice_weight",    "bce_weight",       "threshold",
      "max_steps",      "synth_image_side", "synth_min_objects",
      "synth_max_objects", "synth_tiny_fraction", "synth_position_fraction",
      "synth_samples"};
  return keys;
}

struct ConfigArgs {
  std::string config_path;
  std::shared_ptr<KvMap> overrides = std::make_shared<KvMap>();

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    for (const auto& key : config_keys()) {
      auto sink = overrides;
      cmd->add_option_function<std::string>(
           "--" + key, [sink, key](const std::string& v) { (*sink)[key] = v; },
           "config key " + key)
          ->take_last();
    }
  }

  // file values first, then flag overrides
  int load(ModelConfig& m, TrainConfig& t, SynthSpec& s) const {
    try {
      if (!config_path.empty()) apply_config(parse_config_file(config_path), m, t, s);
      apply_config(*overrides, m, t, s);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    std::vector<std::string> violations;
    for (const auto& v : validate_config(m)) violations.push_back(v);
    for (const auto& v : validate_config(t)) violations.push_back(v);
    for (const auto& v : validate_config(s)) violations.push_back(v);
    if (!violations.empty()) {
      std::cerr << "invalid configuration:\n";
      for (const auto& v : violations) std::cerr << "  - " << v << "\n";
      return 2;
    }
    return 0;
  }
};

int run_train(const ConfigArgs& cargs, const std::string& out_dir, const std::string& manifest,
              const std::string& val_manifest, const std::string& vocab_path, bool overfit,
              bool quiet) {
  ModelConfig mcfg;
  TrainConfig tcfg;
  SynthSpec spec;
  if (overfit) {
    // small-model preset: memorize a handful of samples quickly
    mcfg.input_side = 64;
    mcfg.stage_channels = {8, 12, 16, 24};
    mcfg.lang_dim = 16;
    spec.samples = 16;
    spec.image_side = 128;
    tcfg.lr = 2e-3;
    tcfg.max_steps = 300;
    tcfg.batch_size = 4;
  }
  if (int rc = cargs.load(mcfg, tcfg, spec)) return rc;

  Model model(mcfg, vocab_path.empty() ? Vocab::builtin() : Vocab::load(vocab_path));
  Dataset train_set = manifest.empty() ? make_synth_dataset(mcfg.seed, spec, mcfg)
                                       : load_manifest_dataset(manifest, mcfg);
  std::unique_ptr<Dataset> val;
  if (!val_manifest.empty())
    val = std::make_unique<Dataset>(load_manifest_dataset(val_manifest, mcfg));

  AdamW opt(model.reg, tcfg.weight_decay);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.verbose = !quiet;
  opts.log_every = 10;
  try {
    TrainSummary sum = train_model(model, tcfg, train_set, val.get(), opt, 0, opts);
    std::cout << "steps: " << sum.log.size() << "\n";
    std::cout << "final train mIoU: " << sum.final_train_miou << "\n";
    std::cout << "best val mIoU: " << sum.best_miou << " at step " << sum.best_step << "\n";
    std::cout << "checkpoints and loss.csv in " << out_dir << "\n";
  } catch (const TrainAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

int run_eval(const ConfigArgs& cargs, const std::string& ckpt_path, const std::string& manifest,
             uint64_t synth_seed, const std::string& report_path) {
  if (!fs::exists(ckpt_path)) {
    std::cerr << "checkpoint not found: " << ckpt_path << "\n";
    return 3;
  }
  CheckpointData ck = read_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(ck);

  ModelConfig mcfg = model->cfg;
  TrainConfig tcfg;
  SynthSpec spec;
  spec.samples = 32;
  if (ck.header.contains("train")) tcfg = train_config_from_json(ck.header.at("train"));
  if (int rc = cargs.load(mcfg, tcfg, spec)) return rc;

  Dataset ds = manifest.empty() ? make_synth_dataset(synth_seed, spec, model->cfg)
                                : load_manifest_dataset(manifest, model->cfg);
  auto records = evaluate_model(*model, ds, tcfg.threshold);
  auto report = emit_report(records);
  std::cout << format_metrics_table(records);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
    std::cout << "report written to " << report_path << "\n";
  } else {
    std::cout << report.dump(2) << "\n";
  }
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& expression, const std::string& out_path) {
  if (!fs::exists(ckpt_path)) {
    std::cerr << "checkpoint not found: " << ckpt_path << "\n";
    return 3;
  }
  if (!fs::exists(image_path)) {
    std::cerr << "image not found: " << image_path << "\n";
    return 3;
  }
  CheckpointData ck = read_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(ck);
  synth::Sample sample;
  sample.image = read_image(image_path);
  sample.mask = Raster(sample.image.h, sample.image.w, 1);
  sample.expression = expression;
  ViewBundle vb = prepare_views(sample, model->cfg);
  NoGradGuard ng;
  DecoderOutput out = model->forward(vb, false);
  double threshold = 0.5;
  if (ck.header.contains("train"))
    threshold = train_config_from_json(ck.header.at("train")).threshold;
  Raster mask = predict_mask_raster(out.pred->value, threshold);
  write_mask(mask, out_path);
  std::cout << "mask " << mask.w << "x" << mask.h << " written to " << out_path << "\n";
  return 0;
}

int run_gradcheck(const std::string& module, uint64_t seed) {
  auto results = run_gradcheck_suite(seed, module == "all" ? "" : module);
  bool hard_fail = false;
  for (const auto& e : results) {
    bool ok = e.pass();
    std::cout << (ok ? "PASS" : "FAIL") << "  " << e.name << "  max rel err " << e.rel_err
              << "  (tolerance " << e.tolerance << ")";
    if (!ok) std::cout << "  worst: " << e.worst_param;
    std::cout << "\n";
    if (e.rel_err > 1e-4) hard_fail = true;
  }
  return hard_fail ? 5 : 0;
}

int run_oracle_cmd(const std::string& which, int trials, uint64_t seed) {
  OracleResult res = run_oracle(which, trials, seed);
  std::cout << (res.pass() ? "PASS" : "FAIL") << "  " << res.which << "  " << res.trials
            << " trials  max deviation " << res.max_deviation << "  (tolerance "
            << res.tolerance << ")\n";
  return res.pass() ? 0 : 5;
}

int run_ablate(const ConfigArgs& cargs, const std::string& view_mode,
               const std::string& exchange_mode, const std::string& variant,
               const std::string& truncate, const std::string& decoder_variant, bool no_cda,
               bool no_skip, const std::string& report_path) {
  if (decoder_variant == "arc") {
    std::cerr << "decoder variant 'arc' is not implemented\n";
    return 1;
  }
  if (decoder_variant != "cdad") {
    std::cerr << "unknown decoder variant: " << decoder_variant << "\n";
    return 2;
  }
  ModelConfig mcfg;
  TrainConfig tcfg;
  SynthSpec spec;
  if (int rc = cargs.load(mcfg, tcfg, spec)) return rc;

  AblationSwitches ab;
  try {
    ab.view_mode = parse_view_mode(view_mode);
    ab.exchange_mode = parse_exchange_mode(exchange_mode);
    ab.variant = parse_cvwin_variant(variant);
    ab.truncate = parse_decoder_truncate(truncate);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  ab.cda_enabled = !no_cda;
  ab.skip_enabled = !no_skip;

  Model model(mcfg, Vocab::builtin(), ab);
  Dataset ds = make_synth_dataset(mcfg.seed, spec, mcfg);
  AdamW opt(model.reg, tcfg.weight_decay);
  try {
    train_model(model, tcfg, ds, nullptr, opt);
  } catch (const TrainAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 4;
  }
  auto records = evaluate_model(model, ds, tcfg.threshold);
  auto report = emit_report(records);
  report["ablation"] = switches_to_json(model.ab);
  std::cout << format_metrics_table(records);
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
  }
  return 0;
}

int run_params(const ConfigArgs& cargs) {
  ModelConfig mcfg;
  TrainConfig tcfg;
  SynthSpec spec;
  if (int rc = cargs.load(mcfg, tcfg, spec)) return rc;
  Model model(mcfg);
  std::map<std::string, int64_t> groups;
  for (const auto& [name, p] : model.reg.params()) {
    std::string head = name.substr(0, name.find('.'));
    groups[head] += p->value.size();
  }
  for (const auto& [g, n] : groups) std::cout << g << ": " << n << "\n";
  std::cout << "total: " << model.param_count() << "\n";
  return 0;
}

int run_export(const ConfigArgs& cargs, const std::string& out_dir, uint64_t seed) {
  ModelConfig mcfg;
  TrainConfig tcfg;
  SynthSpec spec;
  if (int rc = cargs.load(mcfg, tcfg, spec)) return rc;
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < spec.samples; ++i) {
    synth::Sample s = synth::generate_sample(mix_seed(seed, static_cast<uint64_t>(i)), spec);
    ManifestEntry e;
    e.image_path = out_dir + "/sample_" + std::to_string(i) + ".ppm";
    e.mask_path = out_dir + "/sample_" + std::to_string(i) + ".pgm";
    e.expression = s.expression;
    e.category = s.category;
    write_image(s.image, e.image_path);
    write_mask(s.mask, e.mask_path);
    entries.push_back(e);
  }
  std::string manifest = out_dir + "/manifest.tsv";
  write_manifest(entries, manifest);
  std::cout << entries.size() << " samples written, manifest at " << manifest << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-view referring segmentation harness"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train on synthetic or manifest data");
  ConfigArgs train_cfg;
  train_cfg.attach(train);
  std::string train_out = "runs/train", train_manifest, train_val_manifest, train_vocab;
  bool overfit = false, quiet = false;
  train->add_option("--out", train_out, "output directory");
  train->add_option("--manifest", train_manifest, "training manifest (tsv)");
  train->add_option("--val-manifest", train_val_manifest, "validation manifest (tsv)");
  train->add_option("--vocab", train_vocab, "vocabulary file (one token per line)");
  train->add_flag("--overfit", overfit, "small-model overfit preset (16 samples, 300 steps)");
  train->add_flag("--quiet", quiet, "suppress per-step logging");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  ConfigArgs eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_ckpt, eval_manifest, eval_report;
  uint64_t eval_synth_seed = 1234;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "evaluation manifest (tsv)");
  eval->add_option("--synth-seed", eval_synth_seed, "synthetic dataset seed");
  eval->add_option("--report", eval_report, "write metrics JSON here");

  // predict
  auto* predict = app.add_subcommand("predict", "segment one image given an expression");
  std::string pr_ckpt, pr_image, pr_expr, pr_out = "prediction.pgm";
  predict->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  predict->add_option("--image", pr_image, "input image (ppm)")->required();
  predict->add_option("--expression", pr_expr, "referring expression")->required();
  predict->add_option("--out", pr_out, "output mask path (pgm)");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string grad_module = "all";
  uint64_t grad_seed = 0;
  grad->add_option("--module", grad_module,
                   "text-encoder|backbone|align_language|gate_fuse|exchange|fuse_joint|cda|"
                   "decode|losses|full|all");
  grad->add_option("--seed", grad_seed, "seed");

  // oracle
  auto* orc = app.add_subcommand("oracle", "brute-force equivalence checks");
  std::string orc_which;
  int orc_trials = 50;
  uint64_t orc_seed = 0;
  orc->add_option("--which", orc_which, "window_attn|cda|metrics")->required();
  orc->add_option("--trials", orc_trials, "number of random trials");
  orc->add_option("--seed", orc_seed, "seed");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train and evaluate a rewired variant");
  ConfigArgs abl_cfg;
  abl_cfg.attach(abl);
  std::string abl_view = "full", abl_exchange = "bidirectional", abl_variant = "cvwin",
              abl_trunc = "none", abl_decoder = "cdad", abl_report;
  bool abl_no_cda = false, abl_no_skip = false;
  abl->add_option("--view-mode", abl_view, "full|only_close|only_remote");
  abl->add_option("--exchange-mode", abl_exchange, "bidirectional|remote2close|close2remote|none");
  abl->add_option("--cvwin-variant", abl_variant, "cvwin|pwam_stub|iim_stub|direct_sum|no_gate");
  abl->add_option("--decoder-truncate", abl_trunc, "none|d4|d4d3|d4d3d2");
  abl->add_option("--decoder", abl_decoder, "cdad|arc (arc is a named, unimplemented option)");
  abl->add_flag("--no-cda", abl_no_cda, "drop the dilated-attention enhancement");
  abl->add_flag("--no-skip", abl_no_skip, "drop the persistent D1 skip");
  abl->add_option("--report", abl_report, "write metrics JSON here");

  // params
  auto* params = app.add_subcommand("params", "count model parameters");
  ConfigArgs params_cfg;
  params_cfg.attach(params);

  // export
  auto* exp = app.add_subcommand("export", "write a synthetic dataset to disk");
  ConfigArgs exp_cfg;
  exp_cfg.attach(exp);
  std::string exp_out = "synth_data";
  uint64_t exp_seed = 0;
  exp->add_option("--out", exp_out, "output directory");
  exp->add_option("--dataset-seed", exp_seed, "dataset seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return run_train(train_cfg, train_out, train_manifest, train_val_manifest, train_vocab,
                       overfit, quiet);
    if (eval->parsed())
      return run_eval(eval_cfg, eval_ckpt, eval_manifest, eval_synth_seed, eval_report);
    if (predict->parsed()) return run_predict(pr_ckpt, pr_image, pr_expr, pr_out);
    if (grad->parsed()) return run_gradcheck(grad_module, grad_seed);
    if (orc->parsed()) return run_oracle_cmd(orc_which, orc_trials, orc_seed);
    if (abl->parsed())
      return run_ablate(abl_cfg, abl_view, abl_exchange, abl_variant, abl_trunc, abl_decoder,
                        abl_no_cda, abl_no_skip, abl_report);
    if (params->parsed()) return run_params(params_cfg);
    if (exp->parsed()) return run_export(exp_cfg, exp_out, exp_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
