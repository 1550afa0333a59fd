#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "multipod/ops.hpp"
#include "multipod/tensor.hpp"

namespace multipod {

enum class PodFamily { ResNetCifar, ResNetImageNet };
enum class Fusion { Concat, ScaleCombine };

PodFamily parse_pod_family(std::string_view text);
std::string_view to_string(PodFamily family);
/// Accepts "approach1" / "approach2" (and the descriptive aliases "concat",
/// "scale-elementwise").
Fusion parse_fusion(std::string_view text);
std::string_view to_string(Fusion fusion);

/// Residual pod base: everything up to and including global average pooling.
///
/// `blocks_per_stage` is the depth parameter n. The CIFAR family has three
/// stages of widths 16/32/64 and depth 6n+2 (n = 3 is ResNet-20); the ImageNet
/// family has four stages of widths 64/128/256/512, a 7x7 stem with max
/// pooling, and depth 8n+2 (n = 2 is ResNet-18). Stage transitions use a
/// 1x1 stride-2 projection + batch norm on the shortcut.
struct PodBaseSpec {
  PodFamily family = PodFamily::ResNetCifar;
  int blocks_per_stage = 3;

  static PodBaseSpec resnet20() { return {PodFamily::ResNetCifar, 3}; }
  static PodBaseSpec resnet18() { return {PodFamily::ResNetImageNet, 2}; }

  std::vector<std::size_t> stage_widths() const;
  std::size_t feature_dim() const { return stage_widths().back(); }
  int depth() const;
  void validate() const;

  bool operator==(const PodBaseSpec&) const = default;
};

struct MultiPodSpec {
  int pods = 3;
  PodBaseSpec base;
  Fusion fusion = Fusion::Concat;
  CombineMode combine_mode = CombineMode::Sum;
  int classes = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  /// Spec with k pods and seeds 1..k.
  static MultiPodSpec with_pods(int k, PodBaseSpec base = PodBaseSpec::resnet20(),
                                Fusion fusion = Fusion::Concat, int classes = 10);
  void validate() const;

  bool operator==(const MultiPodSpec&) const = default;
};

/// Trainable scalars in one pod base, from layer arithmetic.
std::size_t count_pod_base_params(const PodBaseSpec& base);
/// Trainable scalars in the whole network:
///   approach 1: k * base + (k * L * P + P)
///   approach 2: k * base + k * L + (L * P + P)
std::size_t count_params(const MultiPodSpec& spec);

enum class ParamRole { ConvWeight, DenseWeight, DenseBias, BnGamma, BnBeta, Scale };

template <typename T>
struct Parameter {
  std::string name;
  ParamRole role;
  std::size_t fan_in = 0;
  Tensor<T> value;
  std::vector<T> momentum;
};

/// Ordered, name-unique collection of trainable parameters plus the
/// non-trainable batch-norm running statistics. Element addresses are stable.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, ParamRole role, Shape shape, std::size_t fan_in);
  BatchNormStats<T>& add_stats(std::string name, std::size_t channels);

  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  BatchNormStats<T>& stats(std::string_view name);

  std::deque<Parameter<T>>& params() { return params_; }
  const std::deque<Parameter<T>>& params() const { return params_; }

  struct NamedStats {
    std::string name;
    BatchNormStats<T> stats;
  };
  std::deque<NamedStats>& buffers() { return buffers_; }
  const std::deque<NamedStats>& buffers() const { return buffers_; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void clear_grads();

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::deque<NamedStats> buffers_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
};

/// Kaiming-normal (fan-in, ReLU gain) conv and dense weights; gamma = 1,
/// beta = 0, scale = 1, bias = 0; running stats reset to mean 0 / var 1.
/// Only entries whose name starts with `prefix` are touched. Every tensor
/// draws from its own stream derived from (seed, name).
template <typename T>
void init_params(ParamStore<T>& store, std::uint64_t seed, std::string_view prefix = {});

enum class Phase { Train, Eval };

struct ForwardOptions {
  Phase phase = Phase::Train;
  /// When false, parameters enter the graph as detached constants and no
  /// backward closures are kept for them.
  bool record_graph = true;
};

namespace detail {
template <typename T>
struct ConvBn {
  Parameter<T>* weight = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  BatchNormStats<T>* stats = nullptr;
  int stride = 1;
  int padding = 0;
};

template <typename T>
struct Stage {
  enum class Kind { Stem, Block, Pool } kind = Kind::Block;
  std::string prefix;
  ConvBn<T> a;         // stem conv, or block conv1
  ConvBn<T> b;         // block conv2
  ConvBn<T> shortcut;  // projection; weight == nullptr for identity
  bool max_pool = false;
};
}  // namespace detail

/// One pod base network bound to parameters in a store.
template <typename T>
class PodBase {
 public:
  PodBase(const PodBaseSpec& spec, std::string prefix, ParamStore<T>& store);

  /// B x 3 x H x W -> B x L.
  Tensor<T> forward(const Tensor<T>& x, const ForwardOptions& opts) const;

  /// The base is a chain of stages (stem, residual blocks, pooling);
  /// forward == forward_stage(count-1, ... forward_stage(0, x)).
  std::size_t stage_count() const { return stages_.size(); }
  Tensor<T> forward_stage(std::size_t stage, const Tensor<T>& x, const ForwardOptions& opts) const;
  /// Name prefix shared by every parameter of a stage, ending in '.'.
  const std::string& stage_prefix(std::size_t stage) const { return stages_.at(stage).prefix; }

  const std::string& prefix() const { return prefix_; }
  const PodBaseSpec& spec() const { return spec_; }

 private:
  PodBaseSpec spec_;
  std::string prefix_;
  std::vector<detail::Stage<T>> stages_;
};

/// k pods fused before a dense classifier.
template <typename T>
class MultiPodNet {
 public:
  explicit MultiPodNet(MultiPodSpec spec);
  MultiPodNet(const MultiPodNet&) = delete;
  MultiPodNet& operator=(const MultiPodNet&) = delete;
  MultiPodNet(MultiPodNet&&) noexcept = default;
  MultiPodNet& operator=(MultiPodNet&&) noexcept = default;

  const MultiPodSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return *store_; }
  const ParamStore<T>& params() const { return *store_; }
  const PodBase<T>& pod(std::size_t i) const { return pods_.at(i); }
  std::size_t pod_count() const { return pods_.size(); }

  /// One input per pod, each B x 3 x H x W. Returns B x P logits.
  Tensor<T> forward(std::span<const Tensor<T>> inputs, const ForwardOptions& opts = {}) const;
  Tensor<T> pod_features(std::size_t pod, const Tensor<T>& x, const ForwardOptions& opts) const;
  /// Approach 1: B x kL concatenation. Approach 2: B x L scaled combination.
  Tensor<T> fuse(std::span<const Tensor<T>> features, const ForwardOptions& opts) const;
  /// Dense layer over the fused features. Approach 1 with k > 1 uses
  /// concat_linear, which equals linear(fuse(...)) up to summation order.
  Tensor<T> head(std::span<const Tensor<T>> features, const ForwardOptions& opts) const;

  /// Re-draws all parameters from the spec seeds.
  void reinitialize();

 private:
  MultiPodSpec spec_;
  std::unique_ptr<ParamStore<T>> store_;
  std::vector<PodBase<T>> pods_;
  std::vector<Parameter<T>*> scales_;
  Parameter<T>* fc_weight_ = nullptr;
  Parameter<T>* fc_bias_ = nullptr;
};

/// Seed for the head parameters, mixed from all pod seeds.
std::uint64_t head_seed(std::span<const std::uint64_t> seeds);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class PodBase<float>;
extern template class PodBase<double>;
extern template class MultiPodNet<float>;
extern template class MultiPodNet<double>;

}  // namespace multipod
