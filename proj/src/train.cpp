#include "multipod/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>
#include <cmath>
#include <numeric>
#include <sstream>

#include "multipod/errors.hpp"
#include "multipod/rng.hpp"
#include "multipod/serialization.hpp"

namespace multipod {

void TrainingSchedule::validate() const {
  if (!(base_lr > 0.0)) throw ArgumentError("schedule.base_lr must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ArgumentError("schedule.decay must be in (0, 1]");
  if (epochs < 1) throw ArgumentError("schedule.epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("schedule.batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("schedule.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ArgumentError("schedule.weight_decay must be >= 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 1 || milestones[i] >= epochs) {
      throw ArgumentError("schedule.milestones must lie in [1, epochs)");
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ArgumentError("schedule.milestones must be strictly increasing");
    }
  }
}

double lr_at_epoch(const TrainingSchedule& schedule, int epoch) {
  if (epoch < 0 || epoch >= schedule.epochs) {
    throw ArgumentError("epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(schedule.epochs) + ")");
  }
  double lr = schedule.base_lr;
  for (int m : schedule.milestones) {
    if (m <= epoch) lr *= schedule.decay;
  }
  return lr;
}

template <typename T>
void sgd_step(ParamStore<T>& store, double lr, double momentum, double weight_decay) {
  for (auto& p : store.params()) {
    if (!p.value.has_grad()) {
      throw StateError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
  }
  const T lr_t = static_cast<T>(lr), mom = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (auto& p : store.params()) {
    auto value = p.value.mutable_data();
    const auto grad = p.value.grad();
    auto& v = p.momentum;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i] + wd * value[i];
      v[i] = mom * v[i] + g;
      value[i] -= lr_t * v[i];
    }
    p.value.clear_grad();
  }
}

template <typename T>
bool in_top_k(std::span<const T> scores, int label, int k) {
  const T s = scores[static_cast<std::size_t>(label)];
  int rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const int jj = static_cast<int>(j);
    if (scores[j] > s || (scores[j] == s && jj < label)) ++rank;
  }
  return rank < k;
}

namespace {

template <typename T>
T row_lse(const T* row, std::size_t n) {
  const T mx = *std::max_element(row, row + n);
  T total = T(0);
  for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
  return mx + std::log(total);
}

Image center_crop(const Image& img, int size) {
  const int oy = (static_cast<int>(img.height) - size) / 2;
  const int ox = (static_cast<int>(img.width) - size) / 2;
  return pad_crop_at(img, 0, size, oy, ox);
}

}  // namespace

template <typename T>
EvalMetrics evaluate_center_crop(const MultiPodNet<T>& model, const Dataset& data,
                                 const Normalization& norm, const EvalOptions& opts) {
  if (data.size() == 0) throw ArgumentError("evaluate_center_crop: empty dataset");
  if (opts.crop_size < 0) throw ArgumentError("evaluate_center_crop: negative crop size");
  const std::size_t classes = static_cast<std::size_t>(model.spec().classes);
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  std::size_t hit1 = 0, hit5 = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += bs) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + bs); ++i) idx.push_back(i);
    ImageBatch batch = gather(data, idx);
    if (opts.crop_size > 0) {
      for (auto& img : batch.images) img = center_crop(img, opts.crop_size);
    }
    auto x = eval_input<T>(batch, norm);
    std::vector<Tensor<T>> inputs(model.pod_count(), x);
    auto logits = model.forward(inputs, {Phase::Eval, false});
    const auto z = logits.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::span<const T> row = z.subspan(b * classes, classes);
      const int label = batch.labels[b];
      hit1 += in_top_k<T>(row, label, 1);
      hit5 += in_top_k<T>(row, label, 5);
      loss += static_cast<double>(row_lse(row.data(), classes) - row[static_cast<std::size_t>(label)]);
    }
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n, loss / n, data.size()};
}

std::array<Image, 10> ten_crop_views(const Image& img, int crop_size) {
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  if (crop_size < 1 || crop_size > h || crop_size > w) {
    throw ArgumentError("ten_crop_views: crop size " + std::to_string(crop_size) +
                        " does not fit image");
  }
  const int by = h - crop_size, bx = w - crop_size;
  const std::array<std::pair<int, int>, 5> offsets{
      {{0, 0}, {0, bx}, {by, 0}, {by, bx}, {by / 2, bx / 2}}};
  std::array<Image, 10> views;
  for (std::size_t i = 0; i < 5; ++i) {
    views[i] = pad_crop_at(img, 0, crop_size, offsets[i].first, offsets[i].second);
    views[i + 5] = hflip(views[i]);
  }
  return views;
}

template <typename T>
EvalMetrics evaluate_ten_crop(const MultiPodNet<T>& model, const Dataset& data,
                              const Normalization& norm, int crop_size, const EvalOptions& opts) {
  if (data.size() == 0) throw ArgumentError("evaluate_ten_crop: empty dataset");
  const int size = static_cast<int>(std::min(data.height, data.width));
  const bool degenerate_ok = opts.allow_full_size_crop && crop_size == size;
  if (crop_size < 1 || (crop_size >= size && !degenerate_ok)) {
    throw ArgumentError("evaluate_ten_crop: crop size " + std::to_string(crop_size) +
                        " must be smaller than image size " + std::to_string(size));
  }
  const std::size_t classes = static_cast<std::size_t>(model.spec().classes);
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size / 10);
  std::size_t hit1 = 0, hit5 = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += bs) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + bs); ++i) idx.push_back(i);
    ImageBatch batch = gather(data, idx);
    std::vector<Image> views;
    views.reserve(batch.size() * 10);
    for (const auto& img : batch.images) {
      for (auto& v : ten_crop_views(img, crop_size)) views.push_back(normalize(v, norm));
    }
    auto x = stack_images<T>(views);
    std::vector<Tensor<T>> inputs(model.pod_count(), x);
    auto logits = model.forward(inputs, {Phase::Eval, false});
    auto probs = softmax_rows<T>(logits.data(), views.size(), classes);
    std::vector<T> mean(classes);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::fill(mean.begin(), mean.end(), T(0));
      for (std::size_t v = 0; v < 10; ++v)
        for (std::size_t j = 0; j < classes; ++j) mean[j] += probs[(b * 10 + v) * classes + j];
      for (auto& m : mean) m /= T(10);
      const int label = batch.labels[b];
      hit1 += in_top_k<T>(mean, label, 1);
      hit5 += in_top_k<T>(mean, label, 5);
      loss -= std::log(static_cast<double>(mean[static_cast<std::size_t>(label)]));
    }
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n, loss / n, data.size()};
}

bool TrainLogRecord::same_numbers(const TrainLogRecord& o) const {
  return epoch == o.epoch && lr == o.lr && train_loss == o.train_loss &&
         train_accuracy == o.train_accuracy && eval_loss == o.eval_loss &&
         eval_top1 == o.eval_top1 && eval_top5 == o.eval_top5;
}

std::string TrainLogRecord::to_json_line() const {
  nlohmann::json j{{"epoch", epoch},           {"lr", lr},
                   {"train_loss", train_loss}, {"train_accuracy", train_accuracy},
                   {"eval_loss", eval_loss},   {"eval_top1", eval_top1},
                   {"eval_top5", eval_top5},   {"wall_time", wall_time}};
  return j.dump();
}

// --------------------------------------------------------------- checkpoints

namespace {

template <typename T>
NamedArray make_array(std::string name, Shape shape, std::span<const T> values) {
  NamedArray a;
  a.name = std::move(name);
  a.shape = std::move(shape);
  if constexpr (std::is_same_v<T, double>) {
    a.is_double = true;
    a.f64.assign(values.begin(), values.end());
  } else {
    a.f32.assign(values.begin(), values.end());
  }
  return a;
}

template <typename T>
void copy_array(const NamedArray& a, std::span<T> dst) {
  const std::size_t n = a.is_double ? a.f64.size() : a.f32.size();
  if (n != dst.size()) {
    throw LoadError("checkpoint array '" + a.name + "' has " + std::to_string(n) +
                    " elements, expected " + std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = a.is_double ? static_cast<T>(a.f64[i]) : static_cast<T>(a.f32[i]);
  }
}

}  // namespace

template <typename T>
Checkpoint capture_checkpoint(const MultiPodNet<T>& model, const Normalization& norm) {
  Checkpoint c;
  c.spec = model.spec();
  c.normalize = norm;
  const auto& store = model.params();
  for (const auto& p : store.params()) {
    c.arrays.push_back(make_array<T>("param/" + p.name, p.value.shape(), p.value.data()));
    c.arrays.push_back(
        make_array<T>("momentum/" + p.name, p.value.shape(), std::span<const T>(p.momentum)));
  }
  for (const auto& b : store.buffers()) {
    const Shape s{b.stats.running_mean.size()};
    c.arrays.push_back(
        make_array<T>("running_mean/" + b.name, s, std::span<const T>(b.stats.running_mean)));
    c.arrays.push_back(
        make_array<T>("running_var/" + b.name, s, std::span<const T>(b.stats.running_var)));
  }
  return c;
}

template <typename T>
void restore_checkpoint(MultiPodNet<T>& model, const Checkpoint& ckpt) {
  if (!(ckpt.spec == model.spec())) {
    throw SpecMismatchError("checkpoint model spec " + to_json(ckpt.spec).dump() +
                            " does not match model spec " + to_json(model.spec()).dump());
  }
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : ckpt.arrays) by_name[a.name] = &a;
  auto find = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint is missing array '" + name + "'");
    return *it->second;
  };
  auto& store = model.params();
  for (auto& p : store.params()) {
    copy_array<T>(find("param/" + p.name), p.value.mutable_data());
    copy_array<T>(find("momentum/" + p.name), std::span<T>(p.momentum));
    p.value.clear_grad();
  }
  for (auto& b : store.buffers()) {
    copy_array<T>(find("running_mean/" + b.name), std::span<T>(b.stats.running_mean));
    copy_array<T>(find("running_var/" + b.name), std::span<T>(b.stats.running_var));
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'P', 'O', 'D', 'C', 'K', 'P', 'T'};

class ByteWriter {
 public:
  template <typename V>
  void put(const V& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string file) : data_(data), file_(std::move(file)) {}

  template <typename V>
  V get(const std::string& field) {
    need(sizeof(V), field);
    V v;
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void get_bytes(void* out, std::size_t n, const std::string& field) {
    need(n, field);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(const std::string& field) {
    const auto n = get<std::uint64_t>(field + " length");
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw LoadError(file_ + ": " + what + " in field '" + field + "' at offset " +
                    std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const std::string& field) const {
    if (pos_ + n > data_.size() || pos_ + n < pos_) fail(field, "truncated data");
  }
  const std::string& data_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header{{"spec", to_json(ckpt.spec)}, {"normalize", to_json(ckpt.normalize)},
                        {"epoch", ckpt.epoch},        {"best_metric", ckpt.best_metric},
                        {"best_epoch", ckpt.best_epoch}, {"seed", ckpt.seed},
                        {"rng_state", ckpt.rng_state}};
  ByteWriter w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(Checkpoint::kVersion);
  w.put_string(header.dump());
  w.put<std::uint64_t>(ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    w.put_string(a.name);
    w.put<std::uint8_t>(a.is_double ? 2 : 1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.put<std::uint64_t>(d);
    if (a.is_double) {
      w.put_bytes(a.f64.data(), a.f64.size() * sizeof(double));
    } else {
      w.put_bytes(a.f32.data(), a.f32.size() * sizeof(float));
    }
  }
  const std::uint64_t checksum = name_hash(w.bytes());
  w.put<std::uint64_t>(checksum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open checkpoint for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw LoadError(path.string() + ": checkpoint write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open checkpoint");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(data, path.string());

  char magic[8];
  r.get_bytes(magic, sizeof magic, "magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    r.fail("magic", "not a multipod checkpoint");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw LoadError(path.string() + ": checkpoint version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(Checkpoint::kVersion) + ")");
  }

  Checkpoint c;
  const std::string header_text = r.get_string("header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    r.fail("header", std::string("malformed header JSON (") + e.what() + ")");
  }
  FieldErrors errors;
  try {
    c.spec = model_spec_from_json(header.at("spec"), "header.spec", errors);
    c.normalize = normalization_from_json(header.at("normalize"), "header.normalize", errors);
    c.epoch = header.at("epoch").get<int>();
    c.best_metric = header.at("best_metric").get<double>();
    c.best_epoch = header.at("best_epoch").get<int>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    r.fail("header", std::string("invalid header (") + e.what() + ")");
  }
  if (!errors.empty()) r.fail("header", errors.joined());

  const auto count = r.get<std::uint64_t>("array count");
  if (count > data.size()) r.fail("array count", "implausible value");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::string field = "array[" + std::to_string(i) + "]";
    a.name = r.get_string(field + ".name");
    const std::string af = "array '" + a.name + "'";
    const auto dtype = r.get<std::uint8_t>(af + ".dtype");
    if (dtype != 1 && dtype != 2) r.fail(af + ".dtype", "unknown dtype " + std::to_string(dtype));
    a.is_double = dtype == 2;
    const auto rank = r.get<std::uint32_t>(af + ".rank");
    if (rank == 0 || rank > 8) r.fail(af + ".rank", "invalid rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>(af + ".shape");
      if (e == 0 || e > data.size()) r.fail(af + ".shape", "invalid extent");
      a.shape.push_back(e);
      n *= e;
    }
    if (n > data.size()) r.fail(af + ".data", "implausible element count");
    if (a.is_double) {
      a.f64.resize(n);
      r.get_bytes(a.f64.data(), n * sizeof(double), af + ".data");
    } else {
      a.f32.resize(n);
      r.get_bytes(a.f32.data(), n * sizeof(float), af + ".data");
    }
    c.arrays.push_back(std::move(a));
  }
  const std::size_t payload = r.pos();
  const auto stored = r.get<std::uint64_t>("checksum");
  if (stored != name_hash(std::string_view(data.data(), payload))) {
    r.fail("checksum", "checksum mismatch (file corrupt)");
  }
  if (r.pos() != data.size()) r.fail("trailer", "unexpected trailing bytes");
  return c;
}

// -------------------------------------------------------------------- train

template <typename T>
TrainResult train(MultiPodNet<T>& model, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& opts, const Checkpoint* resume,
                  const Checkpoint* resume_best) {
  const auto& sched = opts.schedule;
  sched.validate();
  opts.augmentation.validate(train_set.height, train_set.width);
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");
  const int k = model.spec().pods;
  const std::size_t classes = static_cast<std::size_t>(model.spec().classes);
  if (train_set.classes > model.spec().classes) {
    throw ArgumentError("train: dataset has more classes than the model");
  }

  std::mt19937_64 shuffle_rng(mix_seed(opts.seed, name_hash("shuffle")));
  int start_epoch = 0;
  double best_metric = -1.0;
  int best_epoch = -1;
  TrainResult result;
  if (resume) {
    if (resume->seed != opts.seed) {
      throw ArgumentError("train: resume checkpoint was written with seed " +
                          std::to_string(resume->seed));
    }
    restore_checkpoint(model, *resume);
    std::istringstream is(resume->rng_state);
    is >> shuffle_rng;
    if (!is) throw LoadError("train: resume checkpoint has an unreadable rng_state");
    start_epoch = resume->epoch;
    best_metric = resume->best_metric;
    best_epoch = resume->best_epoch;
  }
  if (resume_best) result.best = *resume_best;

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_set.size());
  const std::size_t bs = static_cast<std::size_t>(sched.batch_size);

  for (int epoch = start_epoch; epoch < sched.epochs; ++epoch) {
    if (opts.stop_after_epoch && epoch >= *opts.stop_after_epoch) break;
    const double lr = lr_at_epoch(sched, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng() % i]);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t step = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs, ++step) {
      const std::span<const std::size_t> idx(order.data() + b0, std::min(bs, order.size() - b0));
      ImageBatch batch = gather(train_set, idx);
      auto inputs = make_pod_inputs<T>(batch, opts.augmentation, k, static_cast<std::uint64_t>(epoch));
      auto logits = model.forward(inputs, {Phase::Train, true});
      auto loss = softmax_cross_entropy(logits, batch.labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw NumericalError("non-finite loss " + std::to_string(lv) + " at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
      }
      loss.backward();
      sgd_step(model.params(), lr, sched.momentum, sched.weight_decay);

      loss_sum += lv * static_cast<double>(idx.size());
      const auto z = logits.data();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        correct += in_top_k<T>(z.subspan(r * classes, classes), batch.labels[r], 1);
      }
    }

    const EvalMetrics ev = evaluate_center_crop(model, eval_set, opts.augmentation.normalize, opts.eval);
    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.eval_loss = ev.loss;
    rec.eval_top1 = ev.top1;
    rec.eval_top5 = ev.top5;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);

    const bool improved = ev.top1 > best_metric;
    if (improved) {
      best_metric = ev.top1;
      best_epoch = epoch;
    }
    Checkpoint snap = capture_checkpoint(model, opts.augmentation.normalize);
    snap.epoch = epoch + 1;
    snap.best_metric = best_metric;
    snap.best_epoch = best_epoch;
    snap.seed = opts.seed;
    std::ostringstream os;
    os << shuffle_rng;
    snap.rng_state = os.str();
    if (improved) {
      result.best = snap;
      if (opts.on_best) opts.on_best(snap);
    }
    if (opts.on_epoch_end) opts.on_epoch_end(snap);
    result.last = std::move(snap);

    if (opts.stop_at_train_accuracy && rec.train_accuracy >= *opts.stop_at_train_accuracy) break;
    if (opts.stop_when && opts.stop_when(rec)) break;
  }
  if (result.log.empty() && resume) result.last = *resume;
  return result;
}

#define MULTIPOD_INSTANTIATE(T)                                                                 \
  template void sgd_step(ParamStore<T>&, double, double, double);                              \
  template bool in_top_k(std::span<const T>, int, int);                                         \
  template EvalMetrics evaluate_center_crop(const MultiPodNet<T>&, const Dataset&,              \
                                            const Normalization&, const EvalOptions&);          \
  template EvalMetrics evaluate_ten_crop(const MultiPodNet<T>&, const Dataset&,                 \
                                         const Normalization&, int, const EvalOptions&);        \
  template Checkpoint capture_checkpoint(const MultiPodNet<T>&, const Normalization&);          \
  template void restore_checkpoint(MultiPodNet<T>&, const Checkpoint&);                         \
  template TrainResult train(MultiPodNet<T>&, const Dataset&, const Dataset&,                   \
                             const TrainOptions&, const Checkpoint*, const Checkpoint*);

MULTIPOD_INSTANTIATE(float)
MULTIPOD_INSTANTIATE(double)
#undef MULTIPOD_INSTANTIATE

}  // namespace multipod
