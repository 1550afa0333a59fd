// multipod: train, evaluate and inspect MultiPod networks.
//
// Exit codes: 0 success, 1 check failure, 2 usage or config error,
// 3 numerical abort.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "multipod/config.hpp"
#include "multipod/data.hpp"
#include "multipod/errors.hpp"
#include "multipod/gradcheck.hpp"
#include "multipod/image_io.hpp"
#include "multipod/model.hpp"
#include "multipod/serialization.hpp"
#include "multipod/train.hpp"

namespace fs = std::filesystem;
using namespace multipod;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kNumerical = 3;

fs::path default_output_dir(const std::string& leaf) {
  if (const char* env = std::getenv("MULTIPOD_OUTPUT_DIR"); env && *env) return fs::path(env) / leaf;
  return fs::path("multipod-runs") / leaf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open for writing");
  out << text;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> stop_after_epoch;
  bool resume = false;
  bool quiet = false;
};

std::vector<std::string> kept_log_lines(const fs::path& log, int before_epoch) {
  std::vector<std::string> lines;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("epoch")) continue;
    if (j["epoch"].get<int>() < before_epoch) lines.push_back(line);
  }
  return lines;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.schedule.epochs = *a.epochs;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  if (cfg.output_dir.empty()) cfg.output_dir = default_output_dir(fs::path(a.config).stem().string()).string();
  {
    FieldErrors errors;
    try {
      cfg.schedule.validate();
    } catch (const Error& e) {
      errors.add("schedule", e.what());
    }
    validate_run_config(cfg, errors);
    if (!errors.empty()) throw ConfigError(std::move(errors));
  }

  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

  RunData data = load_run_data(cfg.data);
  MultiPodNet<float> model(cfg.model);

  std::optional<Checkpoint> resume, resume_best;
  std::vector<std::string> log_lines;
  if (a.resume) {
    resume = load_checkpoint(out / "last.ckpt");
    if (fs::exists(out / "best.ckpt")) resume_best = load_checkpoint(out / "best.ckpt");
    log_lines = kept_log_lines(out / "log.jsonl", resume->epoch);
  }
  {
    std::ofstream log(out / "log.jsonl", std::ios::trunc);
    for (const auto& l : log_lines) log << l << '\n';
  }

  TrainOptions opts;
  opts.schedule = cfg.schedule;
  opts.augmentation = cfg.augmentation;
  opts.seed = cfg.seed;
  opts.stop_at_train_accuracy = cfg.stop_at_train_accuracy;
  opts.stop_after_epoch = a.stop_after_epoch;
  opts.on_epoch = [&](const TrainLogRecord& r) {
    std::ofstream log(out / "log.jsonl", std::ios::app);
    log << r.to_json_line() << '\n';
    if (!a.quiet) {
      std::printf("epoch %3d  lr %.5g  train loss %.4f acc %.4f  eval loss %.4f top1 %.4f top5 %.4f  %.1fs\n",
                  r.epoch, r.lr, r.train_loss, r.train_accuracy, r.eval_loss, r.eval_top1,
                  r.eval_top5, r.wall_time);
      std::fflush(stdout);
    }
  };
  opts.on_best = [&](const Checkpoint& c) { save_checkpoint(c, out / "best.ckpt"); };
  opts.on_epoch_end = [&](const Checkpoint& c) { save_checkpoint(c, out / "last.ckpt"); };

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train(model, data.train, data.eval, opts, resume ? &*resume : nullptr,
                             resume_best ? &*resume_best : nullptr);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json summary{{"param_count", count_params(cfg.model)},
               {"model", to_json(cfg.model)},
               {"seed", cfg.seed},
               {"epochs_completed", result.last.epoch},
               {"wall_time", wall}};
  if (result.best) {
    summary["best_epoch"] = result.best->best_epoch;
    summary["best_top1"] = result.best->best_metric;
  }
  double best_top5 = 0.0;
  for (const auto& r : result.log) {
    if (result.best && r.epoch == result.best->best_epoch) best_top5 = r.eval_top5;
  }
  for (const auto& l : log_lines) {
    const auto j = json::parse(l);
    if (result.best && j["epoch"].get<int>() == result.best->best_epoch) best_top5 = j["eval_top5"];
  }
  summary["best_top5"] = best_top5;
  if (!result.log.empty()) {
    summary["final_train_loss"] = result.log.back().train_loss;
    summary["final_train_accuracy"] = result.log.back().train_accuracy;
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  if (!a.quiet) std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

// ----------------------------------------------------------- count-params

struct CountArgs {
  std::string config;
  int pods = 3;
  std::string fusion = "approach1";
  std::string combine_mode = "sum";
  std::string base = "resnet20";
  std::optional<int> n;
  int classes = 10;
  std::optional<long long> expect;
};

int cmd_count_params(const CountArgs& a) {
  MultiPodSpec spec;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw LoadError(a.config + ": cannot read config file");
    const json j = json::parse(in, nullptr, true, true);
    FieldErrors errors;
    if (!j.is_object() || !j.contains("model")) {
      errors.add("model", "is required");
    } else {
      spec = model_spec_from_json(j["model"], "model", errors);
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
  } else {
    PodBaseSpec base;
    if (a.base == "resnet20") {
      base = PodBaseSpec::resnet20();
    } else if (a.base == "resnet18") {
      base = PodBaseSpec::resnet18();
    } else {
      throw ArgumentError("--base must be resnet20 or resnet18");
    }
    if (a.n) base.blocks_per_stage = *a.n;
    spec = MultiPodSpec::with_pods(a.pods, base, parse_fusion(a.fusion), a.classes);
    spec.combine_mode = parse_combine_mode(a.combine_mode);
    spec.validate();
  }
  const std::size_t base_count = count_pod_base_params(spec.base);
  const std::size_t total = count_params(spec);
  std::printf("%zu\n", total);
  std::fprintf(stderr, "pods %d x base %zu + head %zu (%s, %s, depth %d, %d classes)\n", spec.pods,
               base_count, total - static_cast<std::size_t>(spec.pods) * base_count,
               std::string(to_string(spec.fusion)).c_str(),
               std::string(to_string(spec.base.family)).c_str(), spec.base.depth(), spec.classes);
  if (a.expect && static_cast<long long>(total) != *a.expect) {
    std::fprintf(stderr, "mismatch: expected %lld, counted %zu\n", *a.expect, total);
    return kCheckFailed;
  }
  return kOk;
}

// -------------------------------------------------------------- gradcheck

struct GradArgs {
  GradCheckOptions opts;
  std::string fusion = "approach1";
  std::string combine_mode = "sum";
};

int cmd_gradcheck(GradArgs a) {
  a.opts.fusion = parse_fusion(a.fusion);
  a.opts.combine_mode = parse_combine_mode(a.combine_mode);
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport r = run_gradcheck(a.opts);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("checked %zu entries in %zu parameters (%.1fs)\n", r.checked, r.params, wall);
  std::printf("worst error %.3e at %s[%zu] (analytic %.9e, numeric %.9e)\n", r.worst_error,
              r.worst_param.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
  std::printf("max relative %.3e, max absolute %.3e\n", r.worst_relative, r.worst_absolute);
  if (r.passed()) {
    std::printf("PASS: all entries below tolerance %g\n", a.opts.tolerance);
    return kOk;
  }
  std::printf("FAIL: %zu entries at or above tolerance %g in:\n", r.failed, a.opts.tolerance);
  for (const auto& p : r.failed_params) std::printf("  %s\n", p.c_str());
  return kCheckFailed;
}

// ------------------------------------------------------------------- eval

struct DataArgs {
  std::string cifar;
  SyntheticSpec synthetic;
  int split = 1;
  std::string config;
};

Dataset eval_dataset(const DataArgs& d) {
  if (!d.config.empty()) return load_run_data(load_run_config(d.config).data).eval;
  if (!d.cifar.empty()) return load_cifar10(d.cifar).test;
  return make_synthetic(d.synthetic, static_cast<std::uint64_t>(d.split));
}

struct EvalArgs {
  std::string checkpoint;
  DataArgs data;
  std::string protocol = "center";
  int crop_size = 0;
  std::size_t batch_size = 128;
};

int cmd_eval(const EvalArgs& a) {
  if (a.protocol != "center" && a.protocol != "tencrop") {
    throw ArgumentError("--protocol must be center or tencrop");
  }
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Dataset data = eval_dataset(a.data);
  if (data.classes > ckpt.spec.classes) {
    throw SpecMismatchError("dataset has " + std::to_string(data.classes) +
                            " classes but the checkpoint model has " +
                            std::to_string(ckpt.spec.classes));
  }
  if (data.channels != 3) throw SpecMismatchError("dataset images must have 3 channels");
  MultiPodNet<float> model(ckpt.spec);
  restore_checkpoint(model, ckpt);

  EvalOptions opts;
  opts.batch_size = a.batch_size;
  EvalMetrics m;
  int crop = a.crop_size;
  if (a.protocol == "center") {
    opts.crop_size = crop;
    m = evaluate_center_crop(model, data, ckpt.normalize, opts);
  } else {
    if (crop == 0) crop = static_cast<int>(std::min(data.height, data.width)) * 7 / 8;
    m = evaluate_ten_crop(model, data, ckpt.normalize, crop, opts);
  }
  std::printf("protocol %s crop %d samples %zu top1 %.10g top5 %.10g loss %.10g\n",
              a.protocol.c_str(), crop, m.samples, m.top1, m.top5, m.loss);
  return kOk;
}

// -------------------------------------------------------- augment-preview

struct PreviewArgs {
  std::string image;
  std::optional<std::size_t> sample_index;
  DataArgs data;
  int pods = 3;
  std::string routing = "per-pod-jitter";
  std::vector<double> brightness{0.6, 1.4};
  std::vector<double> contrast{0.6, 1.4};
  std::vector<double> saturation{0.6, 1.4};
  bool fixed_order = false;
  int pad = 0;
  int crop_size = 0;
  double hflip_prob = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::string out;
};

int cmd_augment_preview(const PreviewArgs& a) {
  Image img;
  std::uint64_t sample_id = 0;
  if (!a.image.empty()) {
    img = read_ppm(a.image);
  } else if (a.sample_index) {
    DataArgs d = a.data;
    if (d.config.empty() && d.cifar.empty()) d.split = 0;
    const Dataset data = !d.cifar.empty() ? load_cifar10(d.cifar).train : eval_dataset(d);
    img = data.image(*a.sample_index);
    sample_id = *a.sample_index;
  } else {
    throw ArgumentError("one of --image or --sample-index is required");
  }

  AugmentationSpec spec;
  spec.pad = a.pad;
  spec.crop_size = a.crop_size;
  spec.hflip_prob = a.hflip_prob;
  spec.routing = parse_pod_routing(a.routing);
  spec.seed = a.seed;
  JitterSpec jitter;
  jitter.brightness = {a.brightness[0], a.brightness[1]};
  jitter.contrast = {a.contrast[0], a.contrast[1]};
  jitter.saturation = {a.saturation[0], a.saturation[1]};
  jitter.random_order = !a.fixed_order;
  spec.jitter = jitter;
  spec.validate(img.height, img.width);

  const fs::path out = a.out.empty() ? default_output_dir("preview") : fs::path(a.out);
  fs::create_directories(out);
  const auto views = augment_for_pods(img, spec, a.pods, a.epoch, sample_id);
  write_ppm(img, out / "original.ppm");
  std::printf("%s\n", (out / "original.ppm").string().c_str());
  for (std::size_t p = 0; p < views.size(); ++p) {
    const fs::path f = out / ("pod" + std::to_string(p) + ".ppm");
    write_ppm(views[p], f);
    std::printf("%s\n", f.string().c_str());
  }
  return kOk;
}

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--config", d.config, "Run config; its eval split is used");
  cmd->add_option("--cifar", d.cifar, "CIFAR-10 binary directory");
  cmd->add_option("--synthetic-classes", d.synthetic.classes, "Synthetic classes");
  cmd->add_option("--synthetic-samples", d.synthetic.samples, "Synthetic sample count");
  cmd->add_option("--synthetic-size", d.synthetic.size, "Synthetic image size");
  cmd->add_option("--synthetic-seed", d.synthetic.seed, "Synthetic prototype seed");
  cmd->add_flag("--symmetric", d.synthetic.symmetric, "Mirror synthetic images");
  cmd->add_option("--split", d.split, "Synthetic split (0 train, 1 eval)");
}

void check_range(const std::vector<double>& v, const char* name) {
  if (v.size() != 2) throw ArgumentError(std::string("--") + name + " takes LO HI");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MultiPod networks: parallel ResNet pods with fused features"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  train_cmd->add_option("--config,config", train_args.config, "Run config file")->required();
  train_cmd->add_option("--output-dir", train_args.output_dir, "Overrides output_dir");
  train_cmd->add_option("--seed", train_args.seed, "Overrides seed");
  train_cmd->add_option("--epochs", train_args.epochs, "Overrides schedule.epochs");
  train_cmd->add_option("--stop-after-epoch", train_args.stop_after_epoch,
                        "End the session after this many completed epochs");
  train_cmd->add_flag("--resume", train_args.resume, "Continue from <output-dir>/last.ckpt");
  train_cmd->add_flag("--quiet", train_args.quiet, "No per-epoch output");

  CountArgs count_args;
  auto* count_cmd = app.add_subcommand("count-params", "Print the exact trainable parameter count");
  count_cmd->add_option("--config", count_args.config, "Take the model from a run config");
  count_cmd->add_option("--pods", count_args.pods, "Pod count k");
  count_cmd->add_option("--fusion", count_args.fusion, "approach1 | approach2");
  count_cmd->add_option("--combine-mode", count_args.combine_mode, "sum | product");
  count_cmd->add_option("--base", count_args.base, "resnet20 | resnet18");
  count_cmd->add_option("--n", count_args.n, "Blocks per stage");
  count_cmd->add_option("--classes", count_args.classes, "Classes P");
  count_cmd->add_option("--expect", count_args.expect, "Exit 1 unless the count equals this");

  GradArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of backward");
  grad_cmd->add_option("--pods", grad_args.opts.pods, "Pod count");
  grad_cmd->add_option("--n", grad_args.opts.blocks_per_stage, "Blocks per stage");
  grad_cmd->add_option("--size", grad_args.opts.size, "Input size (<= 16)");
  grad_cmd->add_option("--batch", grad_args.opts.batch, "Batch size");
  grad_cmd->add_option("--classes", grad_args.opts.classes, "Classes");
  grad_cmd->add_option("--fusion", grad_args.fusion, "approach1 | approach2");
  grad_cmd->add_option("--combine-mode", grad_args.combine_mode, "sum | product");
  grad_cmd->add_option("--tolerance", grad_args.opts.tolerance, "Error bound (strict)");
  grad_cmd->add_option("--abs-floor", grad_args.opts.abs_floor,
                       "Absolute difference accepted at the default tolerance");
  grad_cmd->add_option("--step", grad_args.opts.step, "Central difference step h");
  grad_cmd->add_option("--seed", grad_args.opts.seed, "Model and input seed");
  grad_cmd->add_option("--max-entries", grad_args.opts.max_entries_per_param,
                       "Entries checked per parameter tensor (0 = all)");
  grad_cmd->add_flag("--fault-injection", grad_args.opts.fault_injection,
                     "Corrupt pod 0 backward (negative control)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  add_data_flags(eval_cmd, eval_args.data);
  eval_cmd->add_option("--protocol", eval_args.protocol, "center | tencrop");
  eval_cmd->add_option("--crop-size", eval_args.crop_size,
                       "Crop size (center: 0 = whole image; tencrop: default 7/8 of the image)");
  eval_cmd->add_option("--batch-size", eval_args.batch_size, "Eval batch size");

  PreviewArgs prev_args;
  auto* prev_cmd = app.add_subcommand("augment-preview", "Write per-pod augmented views as PPM");
  prev_cmd->add_option("--image", prev_args.image, "Input PPM (P6)");
  prev_cmd->add_option("--sample-index", prev_args.sample_index, "Training sample index");
  add_data_flags(prev_cmd, prev_args.data);
  prev_cmd->add_option("--pods", prev_args.pods, "Pod count");
  prev_cmd->add_option("--routing", prev_args.routing, "identical | shared-jitter | per-pod-jitter");
  prev_cmd->add_option("--brightness", prev_args.brightness, "LO HI")->expected(2);
  prev_cmd->add_option("--contrast", prev_args.contrast, "LO HI")->expected(2);
  prev_cmd->add_option("--saturation", prev_args.saturation, "LO HI")->expected(2);
  prev_cmd->add_flag("--fixed-order", prev_args.fixed_order, "Brightness, contrast, saturation order");
  prev_cmd->add_option("--pad", prev_args.pad, "Crop padding");
  prev_cmd->add_option("--crop-size", prev_args.crop_size, "Crop size (0 = image size)");
  prev_cmd->add_option("--hflip-prob", prev_args.hflip_prob, "Flip probability");
  prev_cmd->add_option("--seed", prev_args.seed, "Augmentation seed");
  prev_cmd->add_option("--epoch", prev_args.epoch, "Epoch key of the random stream");
  prev_cmd->add_option("--out", prev_args.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*count_cmd) return cmd_count_params(count_args);
    if (*grad_cmd) return cmd_gradcheck(grad_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*prev_cmd) {
      check_range(prev_args.brightness, "brightness");
      check_range(prev_args.contrast, "contrast");
      check_range(prev_args.saturation, "saturation");
      return cmd_augment_preview(prev_args);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: invalid config\n");
    for (const auto& f : e.errors().list()) std::fprintf(stderr, "  %s\n", f.c_str());
    return kUsage;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kNumerical;
  } catch (const SpecMismatchError& e) {
    std::fprintf(stderr, "spec mismatch: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
