#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multipod/data.hpp"
#include "multipod/model.hpp"

namespace multipod {

struct TrainingSchedule {
  double base_lr = 0.1;
  std::vector<int> milestones{82, 122, 163};
  double decay = 0.1;
  int epochs = 200;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  /// 32x32 recipe: lr 0.1, /10 at 82/122/163, 200 epochs, batch 128.
  static TrainingSchedule cifar_recipe() { return {}; }
  /// 224x224 recipe: lr 0.1, /10 every 30 epochs, 90 epochs, batch 256.
  static TrainingSchedule imagenet_recipe() { return {0.1, {30, 60}, 0.1, 90, 256, 0.9, 1e-4}; }

  void validate() const;
  bool operator==(const TrainingSchedule&) const = default;
};

/// base_lr * decay^(number of milestones <= epoch).
double lr_at_epoch(const TrainingSchedule& schedule, int epoch);

/// SGD with momentum and L2 weight decay folded into the gradient:
///   g = grad + wd * p;  v = momentum * v + g;  p -= lr * v
/// Gradients are released afterwards; a parameter without a gradient is a
/// StateError.
template <typename T>
void sgd_step(ParamStore<T>& store, double lr, double momentum, double weight_decay);

/// True when `label` is among the k largest scores; ties go to the lower
/// class index.
template <typename T>
bool in_top_k(std::span<const T> scores, int label, int k);

struct EvalMetrics {
  double top1 = 0.0;
  double top5 = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;

  bool operator==(const EvalMetrics&) const = default;
};

struct EvalOptions {
  std::size_t batch_size = 128;
  /// 0 = whole image. Otherwise a centred crop of this size.
  int crop_size = 0;
  /// Ten-crop normally requires crop_size < image size; tests may lift that.
  bool allow_full_size_crop = false;
};

/// Single deterministic view per sample, eval-mode batch norm. Every pod is
/// fed the same normalized image.
template <typename T>
EvalMetrics evaluate_center_crop(const MultiPodNet<T>& model, const Dataset& data,
                                 const Normalization& norm, const EvalOptions& opts = {});

/// Four corner crops and the centre crop, each with its horizontal flip;
/// class probabilities are averaged over the ten views. `loss` is the
/// negative log of the averaged probability of the true class.
template <typename T>
EvalMetrics evaluate_ten_crop(const MultiPodNet<T>& model, const Dataset& data,
                              const Normalization& norm, int crop_size,
                              const EvalOptions& opts = {});

/// The ten views in order: TL, TR, BL, BR, centre, then the same five flipped.
std::array<Image, 10> ten_crop_views(const Image& img, int crop_size);

struct TrainLogRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_loss = 0.0;
  double eval_top1 = 0.0;
  double eval_top5 = 0.0;
  double wall_time = 0.0;

  /// Field-wise equality ignoring wall_time.
  bool same_numbers(const TrainLogRecord& o) const;
  std::string to_json_line() const;
};

struct NamedArray {
  std::string name;
  Shape shape;
  bool is_double = false;
  std::vector<float> f32;
  std::vector<double> f64;

  bool operator==(const NamedArray&) const = default;
};

/// Snapshot of model, optimizer and loop state.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  MultiPodSpec spec;
  Normalization normalize = Normalization::cifar10();
  int epoch = 0;  // epochs completed
  double best_metric = -1.0;
  int best_epoch = -1;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::vector<NamedArray> arrays;  // param/, momentum/, running_mean/, running_var/

  bool operator==(const Checkpoint&) const = default;
};

template <typename T>
Checkpoint capture_checkpoint(const MultiPodNet<T>& model, const Normalization& norm);
/// Copies parameters, momentum and running stats into `model`. Throws
/// SpecMismatchError when the checkpoint was written for another spec.
template <typename T>
void restore_checkpoint(MultiPodNet<T>& model, const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  TrainingSchedule schedule;
  AugmentationSpec augmentation;
  std::uint64_t seed = 0;
  EvalOptions eval;
  /// End the run as soon as an epoch's train accuracy reaches this value.
  std::optional<double> stop_at_train_accuracy;
  /// End the session after this many completed epochs (the schedule still
  /// spans schedule.epochs); used to exercise resume.
  std::optional<int> stop_after_epoch;
  /// Ends the run after the epoch for which it returns true.
  std::function<bool(const TrainLogRecord&)> stop_when;
  std::function<void(const TrainLogRecord&)> on_epoch;
  std::function<void(const Checkpoint&)> on_best;
  std::function<void(const Checkpoint&)> on_epoch_end;
};

struct TrainResult {
  std::optional<Checkpoint> best;
  Checkpoint last;
  std::vector<TrainLogRecord> log;
};

/// Runs the epoch loop: seeded shuffle, per-batch pod inputs, forward, mean
/// cross-entropy, backward, sgd_step at lr_at_epoch; eval after each epoch;
/// the checkpoint with the best eval top-1 is retained. With `resume`, the
/// loop continues from that checkpoint's epoch and RNG state.
template <typename T>
TrainResult train(MultiPodNet<T>& model, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& opts, const Checkpoint* resume = nullptr,
                  const Checkpoint* resume_best = nullptr);

}  // namespace multipod
