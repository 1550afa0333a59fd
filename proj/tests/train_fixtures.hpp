#pragma once

// Small models, datasets and a view-enumerating ten-crop reference shared by
// the training tests and the acceptance binary.

#include <cmath>
#include <vector>

#include "multipod/data.hpp"
#include "multipod/model.hpp"
#include "multipod/train.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace multipod;

inline MultiPodSpec tiny_spec(int pods = 2, int classes = 10, std::uint64_t seed0 = 1) {
  MultiPodSpec s = MultiPodSpec::with_pods(pods, {PodFamily::ResNetCifar, 1}, Fusion::Concat, classes);
  for (int i = 0; i < pods; ++i) s.seeds[static_cast<std::size_t>(i)] = seed0 + static_cast<std::uint64_t>(i);
  return s;
}

/// Gives batch-norm affine parameters and running statistics non-trivial
/// values so that eval-mode outputs depend on every buffer.
template <typename T>
void perturb_buffers(MultiPodNet<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), s(-0.3, 0.3);
  for (auto& p : net.params().params()) {
    if (p.role == ParamRole::BnGamma || p.role == ParamRole::Scale) {
      for (auto& v : p.value.mutable_data()) v = static_cast<T>(u(rng));
    } else if (p.role == ParamRole::BnBeta || p.role == ParamRole::DenseBias) {
      for (auto& v : p.value.mutable_data()) v = static_cast<T>(s(rng));
    }
  }
  for (auto& b : net.params().buffers()) {
    for (auto& v : b.stats.running_mean) v = static_cast<T>(s(rng));
    for (auto& v : b.stats.running_var) v = static_cast<T>(u(rng));
  }
}

struct TenCropReference {
  double top1 = 0, top5 = 0, loss = 0;
};

/// Materializes each of the ten views separately from the raw bytes, runs
/// them one at a time and averages the probabilities.
template <typename T>
TenCropReference ten_crop_reference(const MultiPodNet<T>& net, const Dataset& data,
                                    const Normalization& norm, int crop) {
  const int C = static_cast<int>(data.channels), H = static_cast<int>(data.height),
            W = static_cast<int>(data.width);
  const int P = net.spec().classes;
  const int corners[5][2] = {{0, 0}, {0, W - crop}, {H - crop, 0}, {H - crop, W - crop},
                             {(H - crop) / 2, (W - crop) / 2}};
  TenCropReference r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<float> img(data.image_bytes());
    for (std::size_t j = 0; j < img.size(); ++j)
      img[j] = static_cast<float>(data.pixels[i * data.image_bytes() + j]) / 255.0f;
    std::vector<double> mean(static_cast<std::size_t>(P), 0.0);
    for (int mirror = 0; mirror < 2; ++mirror)
      for (const auto& c : corners) {
        auto view = oracle::crop_view(img, C, H, W, c[0], c[1], crop, mirror == 1);
        std::vector<T> v(view.size());
        const std::size_t plane = static_cast<std::size_t>(crop * crop);
        for (std::size_t j = 0; j < v.size(); ++j) {
          const std::size_t ch = j / plane;
          v[j] = static_cast<T>((static_cast<double>(view[j]) - norm.mean[ch]) / norm.std[ch]);
        }
        Tensor<T> x(Shape{1, static_cast<std::size_t>(C), static_cast<std::size_t>(crop),
                          static_cast<std::size_t>(crop)},
                    std::move(v));
        std::vector<Tensor<T>> in(net.pod_count(), x);
        const auto logits = net.forward(in, {Phase::Eval, false});
        const auto p = oracle::softmax({logits.data().begin(), logits.data().end()});
        for (int j = 0; j < P; ++j) mean[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(j)] / 10.0;
      }
    const int label = data.labels[i];
    const int rank = oracle::rank_of(mean, label);
    r.top1 += rank < 1;
    r.top5 += rank < 5;
    r.loss -= std::log(mean[static_cast<std::size_t>(label)]);
  }
  const double n = static_cast<double>(data.size());
  r.top1 /= n;
  r.top5 /= n;
  r.loss /= n;
  return r;
}

/// A short schedule over a synthetic set, small enough for unit tests.
struct ToyRun {
  Dataset train_set;
  Dataset eval_set;
  TrainOptions opts;
};

inline ToyRun toy_run(int epochs = 6, std::uint64_t seed = 5) {
  ToyRun t;
  t.train_set = make_synthetic({4, 24, 8, 11, false}, 0);
  t.eval_set = make_synthetic({4, 12, 8, 11, false}, 1);
  t.opts.schedule = TrainingSchedule{0.05, {epochs / 2}, 0.1, epochs, 8, 0.9, 1e-4};
  t.opts.augmentation = AugmentationSpec::cifar_recipe(PodRouting::PerPodJitter);
  t.opts.augmentation.pad = 1;
  t.opts.augmentation.crop_size = 8;
  t.opts.augmentation.jitter = JitterSpec{{0.8, 1.2}, {0.8, 1.2}, {0.8, 1.2}, true};
  t.opts.augmentation.seed = seed;
  t.opts.seed = seed;
  t.opts.eval.batch_size = 16;
  return t;
}

}  // namespace fixture
