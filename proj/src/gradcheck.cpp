#include "multipod/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "multipod/errors.hpp"
#include "multipod/ops.hpp"
#include "multipod/rng.hpp"

namespace multipod {

namespace {

using Net = MultiPodNet<double>;
using T64 = Tensor<double>;

// Forward identity, backward scaled.
T64 faulty_identity(const T64& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  return T64::from_op(OpKind::Mul, x.shape(), std::move(v), {x}, [](GraphNode<double>& n) {
    auto g = grad_buffer(*n.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.001 * n.grad[i];
  });
}

void randomize_affine(ParamStore<double>& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.5, 1.5), sym(-0.5, 0.5);
  for (auto& p : store.params()) {
    auto v = p.value.mutable_data();
    switch (p.role) {
      case ParamRole::BnGamma:
      case ParamRole::Scale:
        for (auto& x : v) x = pos(rng);
        break;
      case ParamRole::BnBeta:
      case ParamRole::DenseBias:
        for (auto& x : v) x = sym(rng);
        break;
      default:
        break;
    }
  }
}

class Probe {
 public:
  Probe(const Net& net, std::vector<T64> inputs, std::vector<int> labels)
      : net_(net), labels_(std::move(labels)) {
    const ForwardOptions opts{Phase::Train, false};
    cache_.resize(net.pod_count());
    for (std::size_t p = 0; p < net.pod_count(); ++p) {
      const auto& pod = net.pod(p);
      cache_[p].push_back(inputs[p]);
      for (std::size_t s = 0; s < pod.stage_count(); ++s) {
        cache_[p].push_back(pod.forward_stage(s, cache_[p].back(), opts));
      }
      features_.push_back(cache_[p].back());
    }
  }

  double head_loss(const std::vector<T64>& features) const {
    auto logits = net_.head(features, {Phase::Train, false});
    return softmax_cross_entropy(logits, labels_).item();
  }

  double loss_from_head() const { return head_loss(features_); }

  double loss_from_stage(std::size_t pod, std::size_t stage) const {
    const ForwardOptions opts{Phase::Train, false};
    const auto& base = net_.pod(pod);
    T64 y = cache_[pod][stage];
    for (std::size_t s = stage; s < base.stage_count(); ++s) y = base.forward_stage(s, y, opts);
    auto features = features_;
    features[pod] = y;
    return head_loss(features);
  }

 private:
  const Net& net_;
  std::vector<int> labels_;
  std::vector<std::vector<T64>> cache_;
  std::vector<T64> features_;
};

// Which stage a parameter belongs to; pod == npos for head parameters.
struct Location {
  std::size_t pod = std::string::npos;
  std::size_t stage = 0;
};

Location locate(const Net& net, const std::string& name) {
  for (std::size_t p = 0; p < net.pod_count(); ++p) {
    const auto& pod = net.pod(p);
    for (std::size_t s = 0; s < pod.stage_count(); ++s) {
      if (name.starts_with(pod.stage_prefix(s))) return {p, s};
    }
  }
  if (!name.starts_with("head.")) throw StateError("gradcheck: cannot place parameter " + name);
  return {};
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& o) {
  if (o.pods < 1) throw ArgumentError("gradcheck: pods must be >= 1");
  if (o.size < 4 || o.size > 16) throw ArgumentError("gradcheck: size must be in [4, 16]");
  if (o.batch < 1) throw ArgumentError("gradcheck: batch must be >= 1");
  if (!(o.step > 0.0)) throw ArgumentError("gradcheck: step must be > 0");
  if (!(o.tolerance >= 0.0)) throw ArgumentError("gradcheck: tolerance must be >= 0");

  auto spec = MultiPodSpec::with_pods(o.pods, {PodFamily::ResNetCifar, o.blocks_per_stage},
                                      o.fusion, o.classes);
  spec.combine_mode = o.combine_mode;
  for (auto& s : spec.seeds) s += o.seed * 1000;
  Net net(spec);
  std::mt19937_64 rng(mix_seed(o.seed, name_hash("gradcheck")));
  randomize_affine(net.params(), rng);

  const std::size_t b = static_cast<std::size_t>(o.batch), sz = static_cast<std::size_t>(o.size);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T64> inputs;
  for (int p = 0; p < o.pods; ++p) {
    std::vector<double> v(b * 3 * sz * sz);
    for (auto& x : v) x = normal(rng);
    inputs.emplace_back(Shape{b, 3, sz, sz}, std::move(v));
  }
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(rng() % static_cast<std::uint64_t>(o.classes));

  // Analytic pass.
  {
    std::vector<T64> features;
    for (std::size_t p = 0; p < net.pod_count(); ++p) {
      auto f = net.pod_features(p, inputs[p], {Phase::Train, true});
      features.push_back(p == 0 && o.fault_injection ? faulty_identity(f) : f);
    }
    auto logits = net.head(features, {Phase::Train, true});
    softmax_cross_entropy(logits, labels).backward();
  }

  Probe probe(net, inputs, labels);
  GradCheckReport report;
  for (auto& param : net.params().params()) {
    const Location loc = locate(net, param.name);
    const std::vector<double> analytic(param.value.grad().begin(), param.value.grad().end());
    auto value = param.value.mutable_data();
    const std::size_t n = value.size();
    const std::size_t stride =
        o.max_entries_per_param == 0 ? 1 : std::max<std::size_t>(1, n / o.max_entries_per_param);
    bool param_failed = false;
    ++report.params;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = value[i];
      auto eval = [&](double v) {
        value[i] = v;
        return loc.pod == std::string::npos ? probe.loss_from_head()
                                            : probe.loss_from_stage(loc.pod, loc.stage);
      };
      const double lp = eval(orig + o.step);
      const double lm = eval(orig - o.step);
      value[i] = orig;
      const double numeric = (lp - lm) / (2.0 * o.step);
      const double a = analytic[i];
      const double diff = std::abs(a - numeric);
      const double mag = std::max(std::abs(a), std::abs(numeric));
      const double err = diff / std::max(mag, o.abs_floor / GradCheckOptions::kReferenceTolerance);
      report.worst_absolute = std::max(report.worst_absolute, diff);
      if (mag > 0.0) report.worst_relative = std::max(report.worst_relative, diff / mag);
      ++report.checked;
      if (!(err < o.tolerance)) {
        ++report.failed;
        param_failed = true;
      }
      if (err > report.worst_error || report.checked == 1) {
        report.worst_error = err;
        report.worst_param = param.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    if (param_failed) report.failed_params.push_back(param.name);
  }
  return report;
}

}  // namespace multipod
