// Acceptance gate: one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number; the exit status is non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fd.hpp"
#include "multipod/errors.hpp"
#include "multipod/gradcheck.hpp"
#include "multipod/model.hpp"
#include "multipod/ops.hpp"
#include "multipod/train.hpp"
#include "oracles.hpp"
#include "train_fixtures.hpp"

using namespace multipod;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum class Status { Pass, Fail, Skip } status = Status::Pass;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

// ----------------------------------------------------------------------- 1

Outcome parameter_counts() {
  struct Row {
    int pods;
    PodBaseSpec base;
    Fusion fusion;
    int classes;
    std::size_t expect;
  };
  const PodBaseSpec r20 = PodBaseSpec::resnet20(), r18 = PodBaseSpec::resnet18();
  const std::vector<Row> rows{{1, r20, Fusion::Concat, 10, 272474},
                              {2, r20, Fusion::Concat, 10, 544938},
                              {3, r20, Fusion::Concat, 10, 817402},
                              {3, r20, Fusion::ScaleCombine, 10, 816314},
                              {4, r20, Fusion::Concat, 10, 1089866},
                              {1, r18, Fusion::Concat, 1000, 11689512},
                              {3, r18, Fusion::Concat, 1000, 35066536}};
  std::string bad;
  for (const auto& r : rows) {
    const std::size_t got = count_params(MultiPodSpec::with_pods(r.pods, r.base, r.fusion, r.classes));
    if (got != r.expect) bad += fmt(" [k=%d expected %zu got %zu]", r.pods, r.expect, got);
  }
  const std::size_t base = count_pod_base_params(r20);
  if (base != 271824) bad += fmt(" [base %zu]", base);
  if (3 * base + (192 * 10 + 10) != 817402) bad += " [approach-1 decomposition]";
  const std::size_t a2 = count_params(MultiPodSpec::with_pods(3, r20, Fusion::ScaleCombine, 10));
  if (a2 - 3 * base != 842 || 842 != 3 * 64 + (64 * 10 + 10)) bad += " [approach-2 decomposition]";
  // The assembled network must agree with the closed form.
  MultiPodNet<float> net(MultiPodSpec::with_pods(3));
  if (net.params().scalar_count() != 817402) bad += " [assembled store]";
  return verdict(bad.empty(), bad.empty() ? "7 table counts exact; 817402 = 3*271824 + 1930; 842 = 3*64 + 650"
                                          : "mismatch:" + bad);
}

// ----------------------------------------------------------------------- 2

Outcome gradient_correctness() {
  GradCheckOptions o;  // tripod, n = 1, 8x8, h = 1e-5, tolerance 1e-5, floor 1e-8
  const auto r = run_gradcheck(o);
  return verdict(r.passed() && r.checked > 0,
                 fmt("%zu/%zu entries within 1e-5 over %zu tensors; worst %.3g at %s[%zu]",
                     r.checked - r.failed, r.checked, r.params, r.worst_error, r.worst_param.c_str(),
                     r.worst_index));
}

// ----------------------------------------------------------------------- 3

Outcome operator_oracles() {
  constexpr int kInstances = 50;
  constexpr double kTol = 1e-6;
  std::mt19937_64 rng(20240);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  double conv = 0, bn = 0, ce = 0, ten = 0;
  int ten_rank_mismatch = 0;

  for (int t = 0; t < kInstances; ++t) {
    const int B = pick(1, 3), C = pick(1, 4), F = pick(1, 5), H = pick(3, 9), W = pick(3, 9);
    const int K = pick(1, 3), stride = pick(1, 2), pad = pick(0, 2);
    if (H + 2 * pad < K || W + 2 * pad < K) continue;
    auto x = fd::random_tensor({std::size_t(B), std::size_t(C), std::size_t(H), std::size_t(W)}, rng, false);
    auto w = fd::random_tensor({std::size_t(F), std::size_t(C), std::size_t(K), std::size_t(K)}, rng, false);
    const auto y = conv2d(x, w, stride, pad);
    conv = std::max(conv, oracle::max_rel_err(values(y), oracle::conv2d(values(x), values(w), B, C, H, W, F, K, K, stride, pad)));
  }

  for (int t = 0; t < kInstances; ++t) {
    const int B = pick(2, 4), C = pick(1, 5), H = pick(1, 5), W = pick(1, 5);
    auto x = fd::random_tensor({std::size_t(B), std::size_t(C), std::size_t(H), std::size_t(W)}, rng, false, -3, 3);
    auto g = fd::random_tensor({std::size_t(C)}, rng, false, 0.5, 1.5);
    auto b = fd::random_tensor({std::size_t(C)}, rng, false);
    auto stats = BatchNormStats<double>::initialized(std::size_t(C));
    const auto yt = batch_norm2d(x, g, b, stats, true);
    bn = std::max(bn, oracle::max_rel_err(values(yt), oracle::batch_norm_train(values(x), B, C, H * W, values(g), values(b), kBatchNormEps)));
    const auto ye = batch_norm2d(x, g, b, stats, false);
    bn = std::max(bn, oracle::max_rel_err(values(ye), oracle::batch_norm_eval(values(x), B, C, H * W, values(g), values(b),
                                                                                  stats.running_mean, stats.running_var, kBatchNormEps)));
  }

  for (int t = 0; t < kInstances; ++t) {
    const int B = pick(1, 8), P = pick(2, 12);
    auto z = fd::random_tensor({std::size_t(B), std::size_t(P)}, rng, false, -4, 4);
    std::vector<int> labels(static_cast<std::size_t>(B));
    for (auto& l : labels) l = pick(0, P - 1);
    ce = std::max(ce, oracle::rel_err(softmax_cross_entropy(z, labels).item(), oracle::cross_entropy(values(z), labels, P)));
  }

  for (int t = 0; t < kInstances; ++t) {
    const std::uint64_t s = rng();
    MultiPodNet<double> net(fixture::tiny_spec(pick(1, 3), 10, s % 997 + 1));
    fixture::perturb_buffers(net, s);
    const int size = pick(8, 11);
    const int crop = size - pick(1, 3);
    const Dataset d = make_synthetic({10, pick(3, 8), size, s, false}, 0);
    const auto got = evaluate_ten_crop(net, d, Normalization::cifar10(), crop, {20});
    const auto ref = fixture::ten_crop_reference(net, d, Normalization::cifar10(), crop);
    ten = std::max(ten, oracle::rel_err(got.loss, ref.loss));
    ten_rank_mismatch += (got.top1 != ref.top1) + (got.top5 != ref.top5);
  }

  const bool ok = conv < kTol && bn < kTol && ce < kTol && ten < kTol && ten_rank_mismatch == 0;
  return verdict(ok, fmt("50 instances each; max rel err conv2d %.2g, batch_norm2d %.2g, cross-entropy %.2g, "
                         "ten-crop loss %.2g (accuracy mismatches %d); bound 1e-6",
                         conv, bn, ce, ten, ten_rank_mismatch));
}

// ----------------------------------------------------------------------- 4

Outcome recipe_fidelity() {
  const auto cifar = TrainingSchedule::cifar_recipe();
  const auto inet = TrainingSchedule::imagenet_recipe();
  const std::vector<std::pair<int, double>> c{{0, 0.1}, {82, 0.01}, {122, 0.001}, {163, 0.0001}};
  const std::vector<std::pair<int, double>> i{{0, 0.1}, {30, 0.01}, {60, 0.001}};
  std::string bad;
  // Exact up to the rounding of repeated multiplication by 0.1.
  for (auto [e, lr] : c)
    if (oracle::rel_err(lr_at_epoch(cifar, e), lr) > 1e-15) bad += fmt(" cifar@%d=%.17g", e, lr_at_epoch(cifar, e));
  for (auto [e, lr] : i)
    if (oracle::rel_err(lr_at_epoch(inet, e), lr) > 1e-15) bad += fmt(" imagenet@%d=%.17g", e, lr_at_epoch(inet, e));
  if (cifar.epochs != 200 || cifar.batch_size != 128 || cifar.momentum != 0.9 || cifar.weight_decay != 1e-4)
    bad += " cifar hyperparameters";
  if (inet.epochs != 90 || inet.batch_size != 256) bad += " imagenet hyperparameters";
  return verdict(bad.empty(), bad.empty() ? "0/82/122/163 -> 0.1/0.01/0.001/0.0001; 0/30/60 -> 0.1/0.01/0.001"
                                          : "mismatch:" + bad);
}

// ----------------------------------------------------------------------- 5

Outcome capacity() {
  const Dataset data = make_synthetic({10, 64, 32, 2024, false}, 0);
  MultiPodNet<float> net(MultiPodSpec::with_pods(3));
  TrainOptions o;
  o.schedule = TrainingSchedule{0.05, {}, 0.1, 200, 16, 0.9, 1e-4};
  o.augmentation = AugmentationSpec::none();
  o.seed = 1;
  o.eval.batch_size = 64;
  // Train top-1 measured on the same 64 samples with eval-mode batch norm.
  o.stop_when = [](const TrainLogRecord& r) { return r.eval_top1 == 1.0; };
  const auto res = train(net, data, data, o);
  const auto& last = res.log.back();
  const auto final_eval = evaluate_center_crop(net, data, o.augmentation.normalize);
  return verdict(final_eval.top1 == 1.0,
                 fmt("tripod ResNet-20, 64 samples: train top-1 %.4f after %d epochs (batch-mode accuracy %.4f)",
                     final_eval.top1, last.epoch + 1, last.train_accuracy));
}

// ----------------------------------------------------------------------- 6

Outcome determinism_and_persistence() {
  auto toy = fixture::toy_run(6, 17);
  const auto spec = fixture::tiny_spec(3, 4);
  MultiPodNet<float> a(spec), b(spec);
  const auto full = train(a, toy.train_set, toy.eval_set, toy.opts);
  const auto again = train(b, toy.train_set, toy.eval_set, toy.opts);
  bool identical = full.log.size() == 6 && again.log.size() == 6;
  for (std::size_t e = 0; identical && e < 6; ++e) identical = full.log[e].same_numbers(again.log[e]);

  const fs::path dir = fs::temp_directory_path() / ("multipod_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto first = toy.opts;
  first.stop_after_epoch = 3;
  MultiPodNet<float> c(spec);
  const auto part = train(c, toy.train_set, toy.eval_set, first);
  save_checkpoint(part.last, dir / "epoch3.ckpt");
  if (part.best) save_checkpoint(*part.best, dir / "best3.ckpt");
  const Checkpoint last3 = load_checkpoint(dir / "epoch3.ckpt");
  const std::optional<Checkpoint> best3 =
      part.best ? std::optional(load_checkpoint(dir / "best3.ckpt")) : std::nullopt;
  MultiPodNet<float> d(spec);
  const auto rest = train(d, toy.train_set, toy.eval_set, toy.opts, &last3, best3 ? &*best3 : nullptr);
  bool resumed = part.log.size() == 3 && rest.log.size() == 3;
  for (std::size_t e = 0; resumed && e < 3; ++e)
    resumed = part.log[e].same_numbers(full.log[e]) && rest.log[e].same_numbers(full.log[e + 3]);
  resumed = resumed && rest.last.arrays == full.last.arrays;

  const auto before = evaluate_center_crop(a, toy.eval_set, toy.opts.augmentation.normalize);
  const auto ten_before = evaluate_ten_crop(a, toy.eval_set, toy.opts.augmentation.normalize, 6);
  save_checkpoint(capture_checkpoint(a, toy.opts.augmentation.normalize), dir / "final.ckpt");
  MultiPodNet<float> e(spec);
  restore_checkpoint(e, load_checkpoint(dir / "final.ckpt"));
  const bool eval_same = evaluate_center_crop(e, toy.eval_set, toy.opts.augmentation.normalize) == before &&
                         evaluate_ten_crop(e, toy.eval_set, toy.opts.augmentation.normalize, 6) == ten_before;
  fs::remove_all(dir);
  return verdict(identical && resumed && eval_same,
                 fmt("repeat run bit-identical: %s; resume at epoch 3 of 6 matches: %s; loaded eval bit-identical: %s",
                     identical ? "yes" : "no", resumed ? "yes" : "no", eval_same ? "yes" : "no"));
}

// ----------------------------------------------------------------------- 8

template <typename T>
void copy_prefixed(MultiPodNet<T>& dst, const std::string& dp, const MultiPodNet<T>& src, const std::string& sp) {
  for (auto& p : dst.params().params()) {
    if (!p.name.starts_with(dp)) continue;
    const auto from = src.params().at(sp + p.name.substr(dp.size())).value.data();
    std::copy(from.begin(), from.end(), p.value.mutable_data().begin());
  }
  auto& sb = const_cast<ParamStore<T>&>(src.params());
  for (auto& b : dst.params().buffers()) {
    if (!b.name.starts_with(dp)) continue;
    b.stats = sb.stats(sp + b.name.substr(dp.size()));
  }
}

// Pods relabelled by `perm` (new pod i is old pod perm[i]), with the
// inputs and the classifier's column blocks permuted alike.
template <typename T>
bool permutation_equivariant(std::mt19937_64& rng, Phase phase) {
  const MultiPodSpec spec = fixture::tiny_spec(3, 10, rng() % 1000 + 1);
  MultiPodNet<T> net(spec);
  fixture::perturb_buffers(net, rng());
  std::vector<std::size_t> perm{0, 1, 2};
  while (perm == std::vector<std::size_t>{0, 1, 2}) std::shuffle(perm.begin(), perm.end(), rng);

  MultiPodSpec pspec = spec;
  for (std::size_t i = 0; i < 3; ++i) pspec.seeds[i] = spec.seeds[perm[i]];
  MultiPodNet<T> permuted(pspec);
  for (std::size_t i = 0; i < 3; ++i)
    copy_prefixed(permuted, "pod" + std::to_string(i) + ".", net, "pod" + std::to_string(perm[i]) + ".");
  const auto W = net.params().at("head.fc.weight").value.data();
  auto PW = permuted.params().at("head.fc.weight").value.mutable_data();
  const std::size_t L = 64, P = 10;
  for (std::size_t r = 0; r < P; ++r)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t l = 0; l < L; ++l) PW[r * 3 * L + i * L + l] = W[r * 3 * L + perm[i] * L + l];
  const auto b = net.params().at("head.fc.bias").value.data();
  std::copy(b.begin(), b.end(), permuted.params().at("head.fc.bias").value.mutable_data().begin());

  std::vector<Tensor<T>> in, pin;
  for (int i = 0; i < 3; ++i) {
    auto x = fd::random_tensor({2, 3, 8, 8}, rng, false, -2, 2);
    std::vector<T> v(x.data().begin(), x.data().end());
    in.emplace_back(Shape{2, 3, 8, 8}, std::move(v));
  }
  for (std::size_t i = 0; i < 3; ++i) pin.push_back(in[perm[i]]);
  const ForwardOptions opts{phase, false};
  return values(net.forward(in, opts)) == values(permuted.forward(pin, opts));
}

// A one-pod network against the base network and a dense layer assembled
// independently in a fresh store.
template <typename T>
bool single_pod_is_plain(std::mt19937_64& rng, Fusion fusion, Phase phase) {
  MultiPodSpec spec = fixture::tiny_spec(1, 10, rng() % 1000 + 1);
  spec.fusion = fusion;
  MultiPodNet<T> net(spec);
  fixture::perturb_buffers(net, rng());
  for (auto& p : net.params().params())
    if (p.role == ParamRole::Scale) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), T(1));

  ParamStore<T> store;
  PodBase<T> plain(spec.base, "pod0.", store);
  auto& w = store.add("fc.weight", ParamRole::DenseWeight, {10, 64}, 64);
  auto& bias = store.add("fc.bias", ParamRole::DenseBias, {10}, 0);
  for (auto& p : store.params()) {
    const std::string src = p.name.starts_with("fc.") ? "head." + p.name : p.name;
    const auto from = net.params().at(src).value.data();
    std::copy(from.begin(), from.end(), p.value.mutable_data().begin());
  }
  auto& sb = net.params();
  for (auto& st : store.buffers()) st.stats = sb.stats(st.name);

  auto x64 = fd::random_tensor({3, 3, 8, 8}, rng, false, -2, 2);
  Tensor<T> x(Shape{3, 3, 8, 8}, std::vector<T>(x64.data().begin(), x64.data().end()));
  const ForwardOptions opts{phase, false};
  const std::vector<Tensor<T>> in{x};
  const auto multi = values(net.forward(in, opts));
  const auto ref = values(linear(plain.forward(x, opts), w.value, bias.value));
  return multi == ref;
}

Outcome fusion_structure() {
  std::mt19937_64 rng(8);
  int perm_ok = 0, perm_total = 0, deg_ok = 0, deg_total = 0;
  for (int t = 0; t < 5; ++t)
    for (Phase ph : {Phase::Train, Phase::Eval}) {
      perm_ok += permutation_equivariant<float>(rng, ph);
      perm_ok += permutation_equivariant<double>(rng, ph);
      perm_total += 2;
      for (Fusion f : {Fusion::Concat, Fusion::ScaleCombine}) {
        deg_ok += single_pod_is_plain<float>(rng, f, ph);
        deg_ok += single_pod_is_plain<double>(rng, f, ph);
        deg_total += 2;
      }
    }
  return verdict(perm_ok == perm_total && deg_ok == deg_total,
                 fmt("pod permutation bit-exact %d/%d; k=1 equals plain ResNet bit-exact %d/%d",
                     perm_ok, perm_total, deg_ok, deg_total));
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "parameter-count oracle", 10, parameter_counts},
      {2, "gradient correctness", 300, gradient_correctness},
      {3, "operator oracles", 60, operator_oracles},
      {4, "recipe fidelity", 1, recipe_fidelity},
      {5, "capacity/overfit check", 900, capacity},
      {6, "determinism and persistence", 600, determinism_and_persistence},
      {7, "full-scale accuracy", 0,
       [] {
         return Outcome{Outcome::Status::Skip,
                        "informational only, not a gate: full-dataset accuracy is out of desk scope"};
       }},
      {8, "fusion structural properties", 60, fusion_structure},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.status != Outcome::Status::Skip && secs > c.budget_seconds) {
      o = fail(o.detail + fmt("; took %.1f s, budget %.0f s", secs, c.budget_seconds));
    }
    const char* tag = o.status == Outcome::Status::Pass ? "PASS" : o.status == Outcome::Status::Fail ? "FAIL" : "SKIP";
    failed += o.status == Outcome::Status::Fail;
    std::printf("%s criterion %d (%s, %.1f s): %s\n", tag, c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
