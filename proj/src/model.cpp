#include "multipod/model.hpp"

#include <cmath>
#include <random>
#include <set>
#include <string>

#include "multipod/errors.hpp"
#include "multipod/rng.hpp"

namespace multipod {

PodFamily parse_pod_family(std::string_view text) {
  if (text == "resnet-cifar") return PodFamily::ResNetCifar;
  if (text == "resnet-imagenet") return PodFamily::ResNetImageNet;
  throw ArgumentError("unknown pod family '" + std::string(text) +
                      "' (expected resnet-cifar|resnet-imagenet)");
}

std::string_view to_string(PodFamily family) {
  return family == PodFamily::ResNetCifar ? "resnet-cifar" : "resnet-imagenet";
}

Fusion parse_fusion(std::string_view text) {
  if (text == "approach1" || text == "concat") return Fusion::Concat;
  if (text == "approach2" || text == "scale-elementwise") return Fusion::ScaleCombine;
  throw ArgumentError("unknown fusion '" + std::string(text) + "' (expected approach1|approach2)");
}

std::string_view to_string(Fusion fusion) {
  return fusion == Fusion::Concat ? "approach1" : "approach2";
}

std::vector<std::size_t> PodBaseSpec::stage_widths() const {
  if (family == PodFamily::ResNetCifar) return {16, 32, 64};
  return {64, 128, 256, 512};
}

int PodBaseSpec::depth() const {
  return family == PodFamily::ResNetCifar ? 6 * blocks_per_stage + 2 : 8 * blocks_per_stage + 2;
}

void PodBaseSpec::validate() const {
  if (blocks_per_stage < 1 || blocks_per_stage > 64) {
    throw ArgumentError("unsupported depth parameter n=" + std::to_string(blocks_per_stage) +
                        " (expected 1..64 blocks per stage)");
  }
}

MultiPodSpec MultiPodSpec::with_pods(int k, PodBaseSpec base, Fusion fusion, int classes) {
  MultiPodSpec s;
  s.pods = k;
  s.base = base;
  s.fusion = fusion;
  s.classes = classes;
  s.seeds.clear();
  for (int i = 0; i < k; ++i) s.seeds.push_back(static_cast<std::uint64_t>(i + 1));
  return s;
}

void MultiPodSpec::validate() const {
  base.validate();
  if (pods < 1) throw ArgumentError("pods must be >= 1, got " + std::to_string(pods));
  if (classes < 1) throw ArgumentError("classes must be >= 1, got " + std::to_string(classes));
  if (seeds.size() != static_cast<std::size_t>(pods)) {
    throw ArgumentError("expected " + std::to_string(pods) + " seeds, got " +
                        std::to_string(seeds.size()));
  }
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ArgumentError("pod seeds must be pairwise distinct");
  if (combine_mode != CombineMode::Sum && combine_mode != CombineMode::Product) {
    throw ArgumentError("unknown combine mode");
  }
}

std::size_t count_pod_base_params(const PodBaseSpec& base) {
  base.validate();
  const auto widths = base.stage_widths();
  const std::size_t n = static_cast<std::size_t>(base.blocks_per_stage);
  const std::size_t stem_k = base.family == PodFamily::ResNetCifar ? 3 : 7;
  auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t total = 3 * widths[0] * stem_k * stem_k + bn(widths[0]);
  std::size_t in = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::size_t w = widths[s];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t cin = (b == 0) ? in : w;
      total += cin * w * 9 + bn(w) + w * w * 9 + bn(w);
      const bool downsample = (b == 0 && s > 0);
      if (downsample || cin != w) total += cin * w + bn(w);
    }
    in = w;
  }
  return total;
}

std::size_t count_params(const MultiPodSpec& spec) {
  spec.validate();
  const std::size_t k = static_cast<std::size_t>(spec.pods);
  const std::size_t L = spec.base.feature_dim();
  const std::size_t P = static_cast<std::size_t>(spec.classes);
  const std::size_t bases = k * count_pod_base_params(spec.base);
  if (spec.fusion == Fusion::Concat) return bases + (k * L * P + P);
  return bases + k * L + (L * P + P);
}

std::uint64_t head_seed(std::span<const std::uint64_t> seeds) {
  std::uint64_t h = 0x68656164ull;  // "head"
  for (auto s : seeds) h = mix_seed(h, s);
  return h;
}

// ---------------------------------------------------------------- ParamStore

template <typename T>
Parameter<T>& ParamStore<T>::add(std::string name, ParamRole role, Shape shape,
                                 std::size_t fan_in) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Parameter<T> p;
  p.name = std::move(name);
  p.role = role;
  p.fan_in = fan_in;
  p.value = Tensor<T>::zeros(std::move(shape), true);
  p.momentum.assign(p.value.numel(), T(0));
  params_.push_back(std::move(p));
  return params_.back();
}

template <typename T>
BatchNormStats<T>& ParamStore<T>::add_stats(std::string name, std::size_t channels) {
  if (buffer_index_.count(name)) throw ArgumentError("duplicate buffer name '" + name + "'");
  buffer_index_.emplace(name, buffers_.size());
  buffers_.push_back({std::move(name), BatchNormStats<T>::initialized(channels)});
  return buffers_.back().stats;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
BatchNormStats<T>& ParamStore<T>::stats(std::string_view name) {
  auto it = buffer_index_.find(std::string(name));
  if (it == buffer_index_.end()) {
    throw ArgumentError("no running statistics named '" + std::string(name) + "'");
  }
  return buffers_[it->second].stats;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::clear_grads() {
  for (auto& p : params_) p.value.clear_grad();
}

template <typename T>
void init_params(ParamStore<T>& store, std::uint64_t seed, std::string_view prefix) {
  for (auto& p : store.params()) {
    if (!std::string_view(p.name).starts_with(prefix)) continue;
    auto data = p.value.mutable_data();
    switch (p.role) {
      case ParamRole::ConvWeight:
      case ParamRole::DenseWeight: {
        std::mt19937_64 rng(mix_seed(seed, name_hash(p.name)));
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
        for (auto& v : data) v = static_cast<T>(normal(rng));
        break;
      }
      case ParamRole::BnGamma:
      case ParamRole::Scale:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case ParamRole::BnBeta:
      case ParamRole::DenseBias:
        std::fill(data.begin(), data.end(), T(0));
        break;
    }
    std::fill(p.momentum.begin(), p.momentum.end(), T(0));
    p.value.clear_grad();
  }
  for (auto& b : store.buffers()) {
    if (!std::string_view(b.name).starts_with(prefix)) continue;
    b.stats = BatchNormStats<T>::initialized(b.stats.running_mean.size());
  }
}

// ------------------------------------------------------------------ PodBase

namespace {

template <typename T>
detail::ConvBn<T> make_conv_bn(ParamStore<T>& store, const std::string& conv_name,
                               const std::string& bn_name, std::size_t cin, std::size_t cout,
                               std::size_t k, int stride, int padding) {
  detail::ConvBn<T> l;
  l.weight = &store.add(conv_name + ".weight", ParamRole::ConvWeight, {cout, cin, k, k},
                        cin * k * k);
  l.gamma = &store.add(bn_name + ".gamma", ParamRole::BnGamma, {cout}, 0);
  l.beta = &store.add(bn_name + ".beta", ParamRole::BnBeta, {cout}, 0);
  l.stats = &store.add_stats(bn_name + ".running", cout);
  l.stride = stride;
  l.padding = padding;
  return l;
}

template <typename T>
Tensor<T> param_value(const Parameter<T>& p, const ForwardOptions& opts) {
  return opts.record_graph ? p.value : p.value.detach();
}

template <typename T>
Tensor<T> apply_conv_bn(const detail::ConvBn<T>& l, const Tensor<T>& x,
                        const ForwardOptions& opts) {
  auto y = conv2d(x, param_value(*l.weight, opts), l.stride, l.padding);
  return batch_norm2d(y, param_value(*l.gamma, opts), param_value(*l.beta, opts), *l.stats,
                      opts.phase == Phase::Train);
}

}  // namespace

template <typename T>
PodBase<T>::PodBase(const PodBaseSpec& spec, std::string prefix, ParamStore<T>& store)
    : spec_(spec), prefix_(std::move(prefix)) {
  spec_.validate();
  const auto widths = spec_.stage_widths();
  const bool cifar = spec_.family == PodFamily::ResNetCifar;

  detail::Stage<T> stem;
  stem.kind = detail::Stage<T>::Kind::Stem;
  stem.prefix = prefix_ + "stem.";
  stem.a = cifar ? make_conv_bn(store, stem.prefix + "conv", stem.prefix + "bn", 3, widths[0], 3, 1, 1)
                 : make_conv_bn(store, stem.prefix + "conv", stem.prefix + "bn", 3, widths[0], 7, 2, 3);
  stem.max_pool = !cifar;
  stages_.push_back(std::move(stem));

  std::size_t in = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::size_t w = widths[s];
    for (int b = 0; b < spec_.blocks_per_stage; ++b) {
      detail::Stage<T> blk;
      blk.kind = detail::Stage<T>::Kind::Block;
      blk.prefix = prefix_ + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
      const std::size_t cin = (b == 0) ? in : w;
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      blk.a = make_conv_bn(store, blk.prefix + "conv1", blk.prefix + "bn1", cin, w, 3, stride, 1);
      blk.b = make_conv_bn(store, blk.prefix + "conv2", blk.prefix + "bn2", w, w, 3, 1, 1);
      if (stride != 1 || cin != w) {
        blk.shortcut = make_conv_bn(store, blk.prefix + "shortcut.conv",
                                    blk.prefix + "shortcut.bn", cin, w, 1, stride, 0);
      }
      stages_.push_back(std::move(blk));
    }
    in = w;
  }

  detail::Stage<T> pool;
  pool.kind = detail::Stage<T>::Kind::Pool;
  pool.prefix = prefix_ + "pool.";
  stages_.push_back(std::move(pool));
}

template <typename T>
Tensor<T> PodBase<T>::forward_stage(std::size_t stage, const Tensor<T>& x,
                                    const ForwardOptions& opts) const {
  const auto& st = stages_.at(stage);
  using Kind = typename detail::Stage<T>::Kind;
  switch (st.kind) {
    case Kind::Stem: {
      auto y = relu(apply_conv_bn(st.a, x, opts));
      return st.max_pool ? max_pool2d(y, 3, 2, 1) : y;
    }
    case Kind::Block: {
      auto y = relu(apply_conv_bn(st.a, x, opts));
      y = apply_conv_bn(st.b, y, opts);
      auto shortcut = st.shortcut.weight ? apply_conv_bn(st.shortcut, x, opts) : x;
      return relu(add(y, shortcut));
    }
    case Kind::Pool:
      return global_avg_pool(x);
  }
  throw StateError("corrupt pod stage");
}

template <typename T>
Tensor<T> PodBase<T>::forward(const Tensor<T>& x, const ForwardOptions& opts) const {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ShapeError("pod input must be B x 3 x H x W, got " + shape_string(x.shape()));
  }
  Tensor<T> h = x;
  for (std::size_t s = 0; s < stages_.size(); ++s) h = forward_stage(s, h, opts);
  return h;
}

// -------------------------------------------------------------- MultiPodNet

template <typename T>
MultiPodNet<T>::MultiPodNet(MultiPodSpec spec)
    : spec_(std::move(spec)), store_(std::make_unique<ParamStore<T>>()) {
  spec_.validate();
  const std::size_t k = static_cast<std::size_t>(spec_.pods);
  const std::size_t L = spec_.base.feature_dim();
  const std::size_t P = static_cast<std::size_t>(spec_.classes);
  pods_.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    pods_.emplace_back(spec_.base, "pod" + std::to_string(i) + ".", *store_);
  }
  if (spec_.fusion == Fusion::Concat) {
    fc_weight_ = &store_->add("head.fc.weight", ParamRole::DenseWeight, {P, k * L}, k * L);
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      scales_.push_back(&store_->add("head.scale" + std::to_string(i), ParamRole::Scale, {L}, 0));
    }
    fc_weight_ = &store_->add("head.fc.weight", ParamRole::DenseWeight, {P, L}, L);
  }
  fc_bias_ = &store_->add("head.fc.bias", ParamRole::DenseBias, {P}, 0);
  reinitialize();
}

template <typename T>
void MultiPodNet<T>::reinitialize() {
  for (std::size_t i = 0; i < pods_.size(); ++i) {
    init_params(*store_, spec_.seeds[i], pods_[i].prefix());
  }
  init_params(*store_, head_seed(spec_.seeds), "head.");
}

template <typename T>
Tensor<T> MultiPodNet<T>::pod_features(std::size_t pod, const Tensor<T>& x,
                                       const ForwardOptions& opts) const {
  return pods_.at(pod).forward(x, opts);
}

template <typename T>
Tensor<T> MultiPodNet<T>::fuse(std::span<const Tensor<T>> features,
                               const ForwardOptions& opts) const {
  if (features.size() != pods_.size()) {
    throw ArgumentError("expected " + std::to_string(pods_.size()) + " pod features, got " +
                        std::to_string(features.size()));
  }
  if (spec_.fusion == Fusion::Concat) return concat(features);
  std::vector<Tensor<T>> scales;
  for (auto* s : scales_) scales.push_back(param_value(*s, opts));
  return elementwise_scale_combine<T>(features, scales, spec_.combine_mode);
}

template <typename T>
Tensor<T> MultiPodNet<T>::head(std::span<const Tensor<T>> features,
                               const ForwardOptions& opts) const {
  if (spec_.fusion == Fusion::Concat) {
    if (features.size() != pods_.size()) {
      throw ArgumentError("expected " + std::to_string(pods_.size()) + " pod features, got " +
                          std::to_string(features.size()));
    }
    // A single pod reduces to the plain base + dense head.
    if (features.size() == 1) {
      return linear(features[0], param_value(*fc_weight_, opts), param_value(*fc_bias_, opts));
    }
    return concat_linear(features, param_value(*fc_weight_, opts), param_value(*fc_bias_, opts));
  }
  return linear(fuse(features, opts), param_value(*fc_weight_, opts), param_value(*fc_bias_, opts));
}

template <typename T>
Tensor<T> MultiPodNet<T>::forward(std::span<const Tensor<T>> inputs,
                                  const ForwardOptions& opts) const {
  if (inputs.size() != pods_.size()) {
    throw ArgumentError("expected " + std::to_string(pods_.size()) + " input tensors, got " +
                        std::to_string(inputs.size()));
  }
  std::vector<Tensor<T>> features;
  features.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    features.push_back(pod_features(i, inputs[i], opts));
  }
  return head(features, opts);
}

template void init_params(ParamStore<float>&, std::uint64_t, std::string_view);
template void init_params(ParamStore<double>&, std::uint64_t, std::string_view);
template class ParamStore<float>;
template class ParamStore<double>;
template class PodBase<float>;
template class PodBase<double>;
template class MultiPodNet<float>;
template class MultiPodNet<double>;

}  // namespace multipod
