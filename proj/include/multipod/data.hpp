#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "multipod/tensor.hpp"

namespace multipod {

/// C x H x W float image, values in [0, 1] unless normalized.
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  static Image zeros(std::size_t c, std::size_t h, std::size_t w) {
    return {c, h, w, std::vector<float>(c * h * w, 0.0f)};
  }
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

/// 8-bit image dataset in channel-major layout (one record = C*H*W bytes).
struct Dataset {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  int classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return channels * height * width; }
  /// Record i scaled to [0, 1] (byte / 255).
  Image image(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// One CIFAR-10 binary batch file: records of 1 label byte followed by 3072
/// pixel bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).
Dataset load_cifar10_batch(const std::filesystem::path& file);
void write_cifar10_batch(const Dataset& data, const std::filesystem::path& file);

struct Cifar10 {
  Dataset train;
  Dataset test;
};

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
Cifar10 load_cifar10(const std::filesystem::path& dir);

/// Gaussian class blobs rendered as RGB images. Class prototypes (blob
/// position, size, colour, background) are fixed by `seed`; `split` selects
/// an independent draw of samples from the same classes.
struct SyntheticSpec {
  int classes = 4;
  int samples = 512;
  int size = 16;
  std::uint64_t seed = 7;
  bool symmetric = false;  // mirror every image about its vertical axis

  bool operator==(const SyntheticSpec&) const = default;
};

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t split = 0);

// ---------------------------------------------------------------- augmentation

struct FactorRange {
  double lo = 1.0;
  double hi = 1.0;
  bool operator==(const FactorRange&) const = default;
};

struct JitterSpec {
  FactorRange brightness{0.6, 1.4};
  FactorRange contrast{0.6, 1.4};
  FactorRange saturation{0.6, 1.4};
  bool random_order = true;
  bool operator==(const JitterSpec&) const = default;
};

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  static Normalization cifar10() {
    return {{0.4914, 0.4822, 0.4465}, {0.2023, 0.1994, 0.2010}};
  }
  static Normalization imagenet() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }
  bool operator==(const Normalization&) const = default;
};

enum class PodRouting { Identical, SharedJitter, PerPodJitter };

PodRouting parse_pod_routing(std::string_view text);
std::string_view to_string(PodRouting routing);

struct AugmentationSpec {
  int pad = 4;
  int crop_size = 32;
  double hflip_prob = 0.5;
  std::optional<JitterSpec> jitter;
  Normalization normalize = Normalization::cifar10();
  PodRouting routing = PodRouting::Identical;
  std::uint64_t seed = 0;

  /// Training recipe for 32x32 inputs: pad 4, random 32x32 crop, flip 0.5.
  static AugmentationSpec cifar_recipe(PodRouting routing = PodRouting::Identical);
  /// No geometry, no jitter, normalization only.
  static AugmentationSpec none(Normalization n = Normalization::cifar10());

  void validate(std::size_t image_height, std::size_t image_width) const;
  bool operator==(const AugmentationSpec&) const = default;
};

/// Zero-pads by `pad` and cuts the size x size window whose top-left corner
/// in padded coordinates is (offset_y, offset_x).
Image pad_crop_at(const Image& img, int pad, int size, int offset_y, int offset_x);
/// pad_crop_at with a uniformly drawn offset.
Image pad_random_crop(const Image& img, int pad, int size, std::mt19937_64& rng);

Image hflip(const Image& img);
Image random_hflip(const Image& img, double prob, std::mt19937_64& rng);

struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  /// Application order: 0 = brightness, 1 = contrast, 2 = saturation.
  std::array<int, 3> order{0, 1, 2};
};

JitterFactors draw_jitter(const JitterSpec& spec, std::mt19937_64& rng);

/// Brightness: f*x. Contrast: f*x + (1-f)*mean(luma). Saturation:
/// f*x + (1-f)*luma, luma = 0.299 R + 0.587 G + 0.114 B. Each stage is applied
/// in `order` and clamped to [0, 1]. Factors must be >= 0.
Image color_jitter(const Image& img, const JitterFactors& factors);

/// Per-channel (x - mean) / std.
Image normalize(const Image& img, const Normalization& norm);

/// Images with their labels and the dataset indices used to key per-sample
/// random streams.
struct ImageBatch {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::uint64_t> sample_ids;

  std::size_t size() const { return images.size(); }
};

ImageBatch gather(const Dataset& data, std::span<const std::size_t> indices);

/// Pre-normalization views of one sample for k pods. Crop and flip are drawn
/// once and shared; jitter follows the routing. Randomness is keyed by
/// (spec.seed, epoch, sample_id) so results do not depend on batching.
std::vector<Image> augment_for_pods(const Image& img, const AugmentationSpec& spec, int k,
                                    std::uint64_t epoch, std::uint64_t sample_id);

/// Stacks images into a B x C x H x W tensor.
template <typename T>
Tensor<T> stack_images(std::span<const Image> images);

/// k normalized B x 3 x H' x W' tensors, one per pod.
template <typename T>
std::vector<Tensor<T>> make_pod_inputs(const ImageBatch& batch, const AugmentationSpec& spec, int k,
                                       std::uint64_t epoch);

/// Deterministic eval input: normalization only.
template <typename T>
Tensor<T> eval_input(const ImageBatch& batch, const Normalization& norm);

}  // namespace multipod
