#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "multipod/errors.hpp"
#include "multipod/train.hpp"
#include "train_fixtures.hpp"

using namespace multipod;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("multipod_train_" + std::to_string(::getpid()) + "_" + name);
}

template <typename T>
void set_all(Tensor<T>& t, T v) {
  for (auto& x : t.mutable_data()) x = v;
}

template <typename T>
void set_grad(Tensor<T>& t, T v) {
  for (auto& x : t.mutable_grad()) x = v;
}

}  // namespace

// ---------------------------------------------------------------- schedule

TEST_CASE("learning-rate schedule examples") {
  const auto cifar = TrainingSchedule::cifar_recipe();
  CHECK(lr_at_epoch(cifar, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at_epoch(cifar, 81) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at_epoch(cifar, 82) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at_epoch(cifar, 122) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at_epoch(cifar, 163) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK(lr_at_epoch(cifar, 199) == doctest::Approx(0.0001).epsilon(1e-15));
  const auto inet = TrainingSchedule::imagenet_recipe();
  CHECK(lr_at_epoch(inet, 29) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at_epoch(inet, 30) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at_epoch(inet, 60) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at_epoch(inet, 89) == doctest::Approx(0.001).epsilon(1e-15));
  TrainingSchedule flat = cifar;
  flat.milestones.clear();
  for (int e : {0, 50, 199}) CHECK(lr_at_epoch(flat, e) == 0.1);
  CHECK_THROWS_AS(lr_at_epoch(cifar, 200), ArgumentError);
  CHECK_THROWS_AS(lr_at_epoch(cifar, -1), ArgumentError);
}

TEST_CASE("learning rate is non-increasing with |milestones| + 1 distinct values") {
  for (const auto& s : {TrainingSchedule::cifar_recipe(), TrainingSchedule::imagenet_recipe()}) {
    std::set<double> distinct;
    double prev = INFINITY;
    for (int e = 0; e < s.epochs; ++e) {
      const double lr = lr_at_epoch(s, e);
      CHECK(lr <= prev);
      prev = lr;
      distinct.insert(lr);
    }
    CHECK(distinct.size() == s.milestones.size() + 1);
  }
}

TEST_CASE("schedule validation") {
  TrainingSchedule s;
  CHECK_NOTHROW(s.validate());
  s.milestones = {10, 10};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s.milestones = {200};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s = {};
  s.batch_size = 0;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
}

// --------------------------------------------------------------------- SGD

TEST_CASE("SGD momentum recurrence") {
  ParamStore<double> store;
  auto& p = store.add("p", ParamRole::DenseWeight, {1}, 1);
  set_all(p.value, 1.0);
  set_grad(p.value, 1.0);
  sgd_step(store, 0.1, 0.9, 0.0);
  CHECK(p.value.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p.momentum[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_FALSE(p.value.has_grad());
  set_grad(p.value, 1.0);
  sgd_step(store, 0.1, 0.9, 0.0);
  CHECK(p.value.data()[0] == doctest::Approx(0.71).epsilon(1e-15));
  CHECK(p.momentum[0] == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("SGD special cases") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  ParamStore<double> store;
  auto& p = store.add("w", ParamRole::ConvWeight, {4, 3}, 3);
  for (auto& v : p.value.mutable_data()) v = d(rng);
  for (auto& v : p.momentum) v = d(rng);

  SUBCASE("zero gradient decays momentum only") {
    const std::vector<double> before(p.value.data().begin(), p.value.data().end());
    const std::vector<double> m0 = p.momentum;
    set_grad(p.value, 0.0);
    sgd_step(store, 0.1, 0.9, 0.0);
    for (std::size_t i = 0; i < m0.size(); ++i) {
      CHECK(p.momentum[i] == 0.9 * m0[i]);
      CHECK(p.value.data()[i] == doctest::Approx(before[i] - 0.1 * (0.9 * m0[i])).epsilon(1e-14));
    }
  }
  SUBCASE("zero momentum is plain gradient descent") {
    const std::vector<double> before(p.value.data().begin(), p.value.data().end());
    std::vector<double> g(before.size());
    auto gb = p.value.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] = d(rng);
    sgd_step(store, 0.05, 0.0, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(p.value.data()[i] == before[i] - 0.05 * g[i]);
  }
  SUBCASE("weight decay shrinks magnitudes") {
    std::fill(p.momentum.begin(), p.momentum.end(), 0.0);
    const std::vector<double> before(p.value.data().begin(), p.value.data().end());
    set_grad(p.value, 0.0);
    sgd_step(store, 0.1, 0.9, 1e-4);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(std::abs(p.value.data()[i]) < std::abs(before[i]));
      CHECK(p.value.data()[i] * before[i] > 0);
    }
  }
}

TEST_CASE("SGD without gradients is a state error and changes nothing") {
  ParamStore<float> store;
  auto& a = store.add("a", ParamRole::DenseBias, {2}, 0);
  auto& b = store.add("b", ParamRole::DenseBias, {2}, 0);
  set_all(a.value, 1.0f);
  set_grad(a.value, 1.0f);
  (void)b;
  CHECK_THROWS_AS(sgd_step(store, 0.1, 0.9, 0.0), StateError);
  CHECK(a.value.data()[0] == 1.0f);
}

// ------------------------------------------------------------------- top-k

TEST_CASE("top-k with lowest-index tie-break") {
  const std::vector<double> s{0.5, 0.5, 0.1, 0.9};
  CHECK(in_top_k<double>(s, 3, 1));
  CHECK_FALSE(in_top_k<double>(s, 0, 1));
  CHECK(in_top_k<double>(s, 0, 2));
  CHECK_FALSE(in_top_k<double>(s, 1, 2));
  CHECK(in_top_k<double>(s, 1, 3));
  const std::vector<double> flat(10, 0.0);
  CHECK(in_top_k<double>(flat, 0, 1));
  CHECK(in_top_k<double>(flat, 4, 5));
  CHECK_FALSE(in_top_k<double>(flat, 5, 5));
}

TEST_CASE("top-5 of uniform random logits over 10 classes is about one half") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 20000;
  int hits = 0;
  std::vector<double> s(10);
  for (int i = 0; i < n; ++i) {
    for (auto& v : s) v = u(rng);
    hits += in_top_k<double>(s, i % 10, 5);
  }
  CHECK(std::abs(hits / double(n) - 0.5) < 0.03);
}

TEST_CASE("constant logits give the class-0 frequency") {
  MultiPodNet<float> net(fixture::tiny_spec(2, 4));
  set_all(net.params().at("head.fc.weight").value, 0.0f);
  set_all(net.params().at("head.fc.bias").value, 0.0f);
  Dataset d = make_synthetic({4, 20, 8, 3, false}, 0);
  d.labels = {0, 1, 0, 2, 3, 0, 1, 1, 0, 2, 2, 3, 1, 0, 1, 1, 3, 2, 2, 0};
  const auto m = evaluate_center_crop(net, d, Normalization::cifar10(), {7});
  CHECK(m.top1 == 6.0 / 20.0);
  CHECK(m.top5 == 1.0);
  CHECK(m.loss == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  CHECK(m.samples == 20);
}

// -------------------------------------------------------------- evaluation

TEST_CASE("center-crop evaluation is pure and batch-size independent") {
  MultiPodNet<double> net(fixture::tiny_spec(2, 4));
  fixture::perturb_buffers(net, 4);
  const Dataset d = make_synthetic({4, 13, 10, 5, false}, 0);
  const auto a = evaluate_center_crop(net, d, Normalization::cifar10(), {4, 8});
  const auto b = evaluate_center_crop(net, d, Normalization::cifar10(), {4, 8});
  CHECK(a == b);
  const auto c = evaluate_center_crop(net, d, Normalization::cifar10(), {13, 8});
  CHECK(c.top1 == a.top1);
  CHECK(c.top5 == a.top5);
  CHECK(c.loss == doctest::Approx(a.loss).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate_center_crop(net, Dataset{}, Normalization::cifar10()), ArgumentError);
}

TEST_CASE("ten-crop views") {
  std::mt19937_64 rng(8);
  Image img = Image::zeros(3, 6, 7);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : img.pixels) v = u(rng);
  const auto views = ten_crop_views(img, 4);
  CHECK(views[0] == pad_crop_at(img, 0, 4, 0, 0));
  CHECK(views[1] == pad_crop_at(img, 0, 4, 0, 3));
  CHECK(views[2] == pad_crop_at(img, 0, 4, 2, 0));
  CHECK(views[3] == pad_crop_at(img, 0, 4, 2, 3));
  CHECK(views[4] == pad_crop_at(img, 0, 4, 1, 1));
  for (int i = 0; i < 5; ++i) CHECK(views[static_cast<std::size_t>(i + 5)] == hflip(views[static_cast<std::size_t>(i)]));
  CHECK_THROWS_AS(ten_crop_views(img, 7), ArgumentError);

  // Mirror-symmetric input: each flipped view equals the mirrored-corner view.
  Image sym = img;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 7; ++x) sym.at(c, y, x) = img.at(c, y, std::min(x, 6 - x));
  const auto sv = ten_crop_views(sym, 3);
  CHECK(sv[5] == sv[1]);
  CHECK(sv[6] == sv[0]);
  CHECK(sv[7] == sv[3]);
  CHECK(sv[8] == sv[2]);
  CHECK(sv[9] == sv[4]);
}

TEST_CASE("ten-crop with a full-size crop equals center-crop evaluation") {
  MultiPodNet<double> net(fixture::tiny_spec(2, 4));
  fixture::perturb_buffers(net, 5);
  const Dataset d = make_synthetic({4, 9, 8, 6, true}, 0);
  EvalOptions o{20, 0, true};
  const auto ten = evaluate_ten_crop(net, d, Normalization::cifar10(), 8, o);
  const auto center = evaluate_center_crop(net, d, Normalization::cifar10(), o);
  CHECK(ten.top1 == center.top1);
  CHECK(ten.top5 == center.top5);
  CHECK(ten.loss == doctest::Approx(center.loss).epsilon(1e-10));
  CHECK_THROWS_AS(evaluate_ten_crop(net, d, Normalization::cifar10(), 8), ArgumentError);
  CHECK_THROWS_AS(evaluate_ten_crop(net, d, Normalization::cifar10(), 9, o), ArgumentError);
}

TEST_CASE("ten-crop evaluation matches per-view enumeration") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const std::uint64_t s = rng();
    MultiPodNet<double> net(fixture::tiny_spec(1 + trial % 3, 10, s % 1000 + 1));
    fixture::perturb_buffers(net, s);
    const int size = 9 + trial % 3;
    const Dataset d = make_synthetic({10, 7, size, s, false}, 0);
    const int crop = size - 2 - trial % 2;
    const auto got = evaluate_ten_crop(net, d, Normalization::cifar10(), crop, {30});
    const auto ref = fixture::ten_crop_reference(net, d, Normalization::cifar10(), crop);
    CHECK(got.top1 == ref.top1);
    CHECK(got.top5 == ref.top5);
    CHECK(oracle::rel_err(got.loss, ref.loss) < 1e-6);
  }
}

// -------------------------------------------------------------- checkpoint

TEST_CASE("checkpoint round trip reproduces evaluation bit-exactly") {
  MultiPodNet<float> net(fixture::tiny_spec(3, 4));
  fixture::perturb_buffers(net, 6);
  for (auto& p : net.params().params())
    for (std::size_t i = 0; i < p.momentum.size(); ++i) p.momentum[i] = 0.01f * static_cast<float>(i % 7);
  const Dataset d = make_synthetic({4, 10, 8, 2, false}, 1);
  const auto before = evaluate_center_crop(net, d, Normalization::cifar10());

  Checkpoint c = capture_checkpoint(net, Normalization::cifar10());
  c.epoch = 4;
  c.best_metric = 0.5;
  c.best_epoch = 2;
  c.seed = 77;
  c.rng_state = "1 2 3";
  const auto path = temp_file("rt.ckpt");
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back == c);

  MultiPodNet<float> fresh(fixture::tiny_spec(3, 4));
  restore_checkpoint(fresh, back);
  CHECK(evaluate_center_crop(fresh, d, Normalization::cifar10()) == before);
  for (std::size_t i = 0; i < net.params().size(); ++i)
    CHECK(fresh.params().params()[i].momentum == net.params().params()[i].momentum);

  MultiPodNet<float> other(fixture::tiny_spec(2, 4));
  CHECK_THROWS_AS(restore_checkpoint(other, back), SpecMismatchError);
  MultiPodNet<float> more_classes(fixture::tiny_spec(3, 5));
  CHECK_THROWS_AS(restore_checkpoint(more_classes, back), SpecMismatchError);
  fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected with field context") {
  MultiPodNet<float> net(fixture::tiny_spec(1, 4));
  const Checkpoint c = capture_checkpoint(net, Normalization::cifar10());
  const auto path = temp_file("bad.ckpt");
  save_checkpoint(c, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto message = [&]() -> std::string {
    try {
      load_checkpoint(path);
    } catch (const LoadError& e) {
      return e.what();
    }
    return "";
  };

  std::string v = bytes;
  v[8] = 9;
  write(v);
  CHECK(message().find("version") != std::string::npos);

  write(bytes.substr(0, bytes.size() / 2));
  const std::string trunc = message();
  CHECK(trunc.find("offset") != std::string::npos);
  CHECK(trunc.find(path.filename().string()) != std::string::npos);

  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x40;
  write(flipped);
  CHECK(!message().empty());

  write("not a checkpoint");
  CHECK(message().find("magic") != std::string::npos);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
}

// ---------------------------------------------------------------- training

TEST_CASE("training is deterministic and resumable") {
  auto toy = fixture::toy_run(6);
  MultiPodNet<float> a(fixture::tiny_spec(3, 4));
  const auto full = train(a, toy.train_set, toy.eval_set, toy.opts);
  REQUIRE(full.log.size() == 6);

  MultiPodNet<float> b(fixture::tiny_spec(3, 4));
  const auto again = train(b, toy.train_set, toy.eval_set, toy.opts);
  for (std::size_t e = 0; e < 6; ++e) CHECK(full.log[e].same_numbers(again.log[e]));

  auto first = toy.opts;
  first.stop_after_epoch = 3;
  MultiPodNet<float> c(fixture::tiny_spec(3, 4));
  const auto part = train(c, toy.train_set, toy.eval_set, first);
  REQUIRE(part.log.size() == 3);
  const auto path = temp_file("resume.ckpt");
  save_checkpoint(part.last, path);
  const Checkpoint loaded = load_checkpoint(path);
  fs::remove(path);

  MultiPodNet<float> d(fixture::tiny_spec(3, 4));
  const auto rest = train(d, toy.train_set, toy.eval_set, toy.opts, &loaded,
                          part.best ? &*part.best : nullptr);
  REQUIRE(rest.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(part.log[e].same_numbers(full.log[e]));
    CHECK(rest.log[e].same_numbers(full.log[e + 3]));
  }
  CHECK(rest.last.arrays == full.last.arrays);

  double best = -1;
  for (const auto& r : full.log) best = std::max(best, r.eval_top1);
  REQUIRE(full.best);
  CHECK(full.best->best_metric == best);
  CHECK(full.log[static_cast<std::size_t>(full.best->best_epoch)].eval_top1 == best);
  CHECK(rest.last.best_metric == best);

  for (const auto& r : full.log) {
    CHECK(r.lr == lr_at_epoch(toy.opts.schedule, r.epoch));
    CHECK(r.train_accuracy >= 0.0);
    CHECK(r.train_accuracy <= 1.0);
  }

  auto other_seed = toy.opts;
  other_seed.seed = 6;
  MultiPodNet<float> e(fixture::tiny_spec(3, 4));
  CHECK_THROWS_AS(train(e, toy.train_set, toy.eval_set, other_seed, &loaded), ArgumentError);
}

TEST_CASE("different seeds give different logs") {
  auto toy = fixture::toy_run(2);
  MultiPodNet<float> a(fixture::tiny_spec(2, 4)), b(fixture::tiny_spec(2, 4));
  const auto ra = train(a, toy.train_set, toy.eval_set, toy.opts);
  toy.opts.seed = 123;
  const auto rb = train(b, toy.train_set, toy.eval_set, toy.opts);
  CHECK(ra.log[0].train_loss != rb.log[0].train_loss);
}

TEST_CASE("non-finite loss aborts with epoch and step") {
  auto toy = fixture::toy_run(2);
  MultiPodNet<float> net(fixture::tiny_spec(2, 4));
  net.params().at("head.fc.bias").value.mutable_data()[1] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(net, toy.train_set, toy.eval_set, toy.opts);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string m = e.what();
    CHECK(m.find("epoch 0") != std::string::npos);
    CHECK(m.find("step 0") != std::string::npos);
  }
}

TEST_CASE("training input validation") {
  auto toy = fixture::toy_run(2);
  MultiPodNet<float> net(fixture::tiny_spec(2, 4));
  CHECK_THROWS_AS(train(net, Dataset{3, 8, 8, 4, {}, {}}, toy.eval_set, toy.opts), ArgumentError);
  auto big_crop = toy.opts;
  big_crop.augmentation.crop_size = 11;
  CHECK_THROWS_AS(train(net, toy.train_set, toy.eval_set, big_crop), ArgumentError);
  MultiPodNet<float> narrow(fixture::tiny_spec(2, 3));
  CHECK_THROWS_AS(train(narrow, toy.train_set, toy.eval_set, toy.opts), ArgumentError);
}

TEST_CASE("log records serialize as one JSON line") {
  TrainLogRecord r{3, 0.01, 1.5, 0.25, 1.25, 0.5, 0.75, 2.0};
  const std::string line = r.to_json_line();
  CHECK(line.find('\n') == std::string::npos);
  for (const char* key : {"\"epoch\":3", "\"lr\"", "\"train_loss\"", "\"train_accuracy\"", "\"eval_loss\"",
                          "\"eval_top1\"", "\"eval_top5\"", "\"wall_time\""})
    CHECK(line.find(key) != std::string::npos);
}
