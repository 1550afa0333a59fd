#include "multipod/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "multipod/errors.hpp"
#include "multipod/rng.hpp"

namespace multipod {

Image Dataset::image(std::size_t i) const {
  if (i >= size()) throw ArgumentError("sample index " + std::to_string(i) + " out of range");
  Image img = Image::zeros(channels, height, width);
  const std::uint8_t* src = pixels.data() + i * image_bytes();
  for (std::size_t j = 0; j < image_bytes(); ++j) img.pixels[j] = static_cast<float>(src[j]) / 255.0f;
  return img;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.classes = classes;
  out.pixels.reserve(indices.size() * image_bytes());
  for (auto i : indices) {
    if (i >= size()) throw ArgumentError("subset index " + std::to_string(i) + " out of range");
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * image_bytes());
    out.pixels.insert(out.pixels.end(), first, first + static_cast<std::ptrdiff_t>(image_bytes()));
    out.labels.push_back(labels[i]);
  }
  return out;
}

// ------------------------------------------------------------------ CIFAR-10

Dataset load_cifar10_batch(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(file.string() + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes.size() / kCifarRecordBytes;
    throw LoadError(file.string() + ": size " + std::to_string(bytes.size()) +
                    " is not a multiple of " + std::to_string(kCifarRecordBytes) +
                    "; truncated record " + std::to_string(whole) + " at offset " +
                    std::to_string(whole * kCifarRecordBytes));
  }
  Dataset d;
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  d.labels.resize(records);
  d.pixels.resize(records * 3072);
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    const int label = bytes[off];
    if (label > 9) {
      throw LoadError(file.string() + ": label byte " + std::to_string(label) + " > 9 in record " +
                      std::to_string(r) + " at offset " + std::to_string(off));
    }
    d.labels[r] = label;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(off + 1), 3072,
                d.pixels.begin() + static_cast<std::ptrdiff_t>(r * 3072));
  }
  return d;
}

void write_cifar10_batch(const Dataset& data, const std::filesystem::path& file) {
  if (data.channels != 3 || data.height != 32 || data.width != 32) {
    throw ArgumentError("CIFAR-10 records are 3x32x32");
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw LoadError(file.string() + ": cannot open for writing");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char label = static_cast<char>(data.labels[i]);
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(data.pixels.data() + i * 3072), 3072);
  }
  if (!out) throw LoadError(file.string() + ": write failed");
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  Cifar10 c;
  for (int b = 1; b <= 5; ++b) {
    auto part = load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    c.train.pixels.insert(c.train.pixels.end(), part.pixels.begin(), part.pixels.end());
    c.train.labels.insert(c.train.labels.end(), part.labels.begin(), part.labels.end());
  }
  c.test = load_cifar10_batch(dir / "test_batch.bin");
  return c;
}

// ----------------------------------------------------------------- synthetic

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t split) {
  if (spec.classes < 1 || spec.samples < 1 || spec.size < 4) {
    throw ArgumentError("synthetic dataset needs classes >= 1, samples >= 1, size >= 4");
  }
  const auto n = static_cast<std::size_t>(spec.size);
  const double s = static_cast<double>(spec.size);

  struct Prototype {
    double cx, cy, sigma;
    std::array<double, 3> color;
  };
  std::vector<Prototype> protos;
  for (int c = 0; c < spec.classes; ++c) {
    auto rng = derive_rng({spec.seed, 0x70726f746full, static_cast<std::uint64_t>(c)});
    Prototype p;
    p.cx = (0.25 + 0.5 * uniform01(rng)) * s;
    p.cy = (0.25 + 0.5 * uniform01(rng)) * s;
    p.sigma = (0.10 + 0.12 * uniform01(rng)) * s;
    for (auto& v : p.color) v = 0.2 + 0.8 * uniform01(rng);
    protos.push_back(p);
  }

  Dataset d;
  d.channels = 3;
  d.height = n;
  d.width = n;
  d.classes = spec.classes;
  d.labels.resize(static_cast<std::size_t>(spec.samples));
  d.pixels.resize(d.labels.size() * d.image_bytes());
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    d.labels[i] = label;
    const auto& p = protos[static_cast<std::size_t>(label)];
    auto rng = derive_rng({spec.seed, split, static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> jitter(0.0, 0.06 * s);
    std::normal_distribution<double> noise(0.0, 0.05);
    const double cx = p.cx + jitter(rng), cy = p.cy + jitter(rng);
    const double amp = 0.7 + 0.3 * uniform01(rng);
    std::array<double, 3> bg;
    for (auto& v : bg) v = 0.35 * uniform01(rng);
    std::uint8_t* dst = d.pixels.data() + i * d.image_bytes();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma));
          double v = bg[c] + amp * p.color[c] * blob + noise(rng);
          v = std::clamp(v, 0.0, 1.0);
          dst[(c * n + y) * n + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    if (spec.symmetric) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t x = 0; x < n / 2; ++x)
            dst[(c * n + y) * n + (n - 1 - x)] = dst[(c * n + y) * n + x];
    }
  }
  return d;
}

// -------------------------------------------------------------- augmentation

PodRouting parse_pod_routing(std::string_view text) {
  if (text == "identical") return PodRouting::Identical;
  if (text == "shared-jitter") return PodRouting::SharedJitter;
  if (text == "per-pod-jitter") return PodRouting::PerPodJitter;
  throw ArgumentError("unknown pod routing '" + std::string(text) +
                      "' (expected identical|shared-jitter|per-pod-jitter)");
}

std::string_view to_string(PodRouting routing) {
  switch (routing) {
    case PodRouting::Identical: return "identical";
    case PodRouting::SharedJitter: return "shared-jitter";
    case PodRouting::PerPodJitter: return "per-pod-jitter";
  }
  return "identical";
}

AugmentationSpec AugmentationSpec::cifar_recipe(PodRouting routing) {
  AugmentationSpec a;
  a.pad = 4;
  a.crop_size = 32;
  a.hflip_prob = 0.5;
  a.routing = routing;
  if (routing != PodRouting::Identical) a.jitter = JitterSpec{};
  return a;
}

AugmentationSpec AugmentationSpec::none(Normalization n) {
  AugmentationSpec a;
  a.pad = 0;
  a.crop_size = 0;
  a.hflip_prob = 0.0;
  a.normalize = n;
  return a;
}

namespace {

void check_range(const FactorRange& r, const char* what) {
  if (!(r.lo >= 0.0) || !(r.hi >= r.lo)) {
    throw ArgumentError(std::string("jitter ") + what + " range must satisfy 0 <= lo <= hi");
  }
}

}  // namespace

void AugmentationSpec::validate(std::size_t image_height, std::size_t image_width) const {
  if (pad < 0) throw ArgumentError("augmentation pad must be >= 0");
  if (crop_size < 0) throw ArgumentError("augmentation crop_size must be >= 0 (0 = image size)");
  const std::size_t limit = std::min(image_height, image_width) + 2 * static_cast<std::size_t>(pad);
  if (static_cast<std::size_t>(crop_size) > limit) {
    throw ArgumentError("crop_size " + std::to_string(crop_size) + " exceeds padded image size " +
                        std::to_string(limit));
  }
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ArgumentError("hflip_prob must be in [0, 1]");
  if (jitter) {
    check_range(jitter->brightness, "brightness");
    check_range(jitter->contrast, "contrast");
    check_range(jitter->saturation, "saturation");
  }
  for (double v : normalize.std) {
    if (!(v > 0.0)) throw ArgumentError("normalization std components must be > 0");
  }
}

Image pad_crop_at(const Image& img, int pad, int size, int offset_y, int offset_x) {
  if (pad < 0 || size < 1) throw ArgumentError("pad_crop: pad must be >= 0 and size >= 1");
  const long ph = static_cast<long>(img.height) + 2L * pad;
  const long pw = static_cast<long>(img.width) + 2L * pad;
  if (size > ph || size > pw) {
    throw ArgumentError("pad_crop: crop size " + std::to_string(size) +
                        " exceeds padded image " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  if (offset_y < 0 || offset_x < 0 || offset_y + size > ph || offset_x + size > pw) {
    throw ArgumentError("pad_crop: offset outside the padded image");
  }
  const auto sz = static_cast<std::size_t>(size);
  Image out = Image::zeros(img.channels, sz, sz);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < sz; ++y) {
      const long sy = offset_y + static_cast<long>(y) - pad;
      if (sy < 0 || sy >= static_cast<long>(img.height)) continue;
      for (std::size_t x = 0; x < sz; ++x) {
        const long sx = offset_x + static_cast<long>(x) - pad;
        if (sx < 0 || sx >= static_cast<long>(img.width)) continue;
        out.at(c, y, x) = img.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  return out;
}

Image pad_random_crop(const Image& img, int pad, int size, std::mt19937_64& rng) {
  const long ph = static_cast<long>(img.height) + 2L * pad;
  const long pw = static_cast<long>(img.width) + 2L * pad;
  if (pad < 0 || size < 1 || size > ph || size > pw) {
    throw ArgumentError("pad_random_crop: crop size " + std::to_string(size) +
                        " does not fit padded image");
  }
  const auto range_y = static_cast<std::uint64_t>(ph - size + 1);
  const auto range_x = static_cast<std::uint64_t>(pw - size + 1);
  const int oy = static_cast<int>(rng() % range_y);
  const int ox = static_cast<int>(rng() % range_x);
  return pad_crop_at(img, pad, size, oy, ox);
}

Image hflip(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image random_hflip(const Image& img, double prob, std::mt19937_64& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ArgumentError("random_hflip: prob must be in [0, 1]");
  return uniform01(rng) < prob ? hflip(img) : img;
}

JitterFactors draw_jitter(const JitterSpec& spec, std::mt19937_64& rng) {
  auto draw = [&](const FactorRange& r) { return r.lo + (r.hi - r.lo) * uniform01(rng); };
  JitterFactors f;
  f.brightness = draw(spec.brightness);
  f.contrast = draw(spec.contrast);
  f.saturation = draw(spec.saturation);
  if (spec.random_order) {
    // Fisher-Yates with the portable draw.
    for (int i = 2; i > 0; --i) {
      const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(f.order[static_cast<std::size_t>(i)], f.order[static_cast<std::size_t>(j)]);
    }
  }
  return f;
}

namespace {

double luma(const Image& img, std::size_t y, std::size_t x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Image color_jitter(const Image& img, const JitterFactors& f) {
  if (f.brightness < 0.0 || f.contrast < 0.0 || f.saturation < 0.0) {
    throw ArgumentError("color_jitter: factors must be >= 0");
  }
  if (img.channels != 3) throw ShapeError("color_jitter: expects a 3-channel image");
  Image cur = img;
  for (int stage : f.order) {
    Image next = cur;
    if (stage == 0) {
      for (std::size_t i = 0; i < cur.pixels.size(); ++i)
        next.pixels[i] = clamp01(f.brightness * static_cast<double>(cur.pixels[i]));
    } else if (stage == 1) {
      double mean = 0.0;
      for (std::size_t y = 0; y < cur.height; ++y)
        for (std::size_t x = 0; x < cur.width; ++x) mean += luma(cur, y, x);
      mean /= static_cast<double>(cur.height * cur.width);
      for (std::size_t i = 0; i < cur.pixels.size(); ++i)
        next.pixels[i] =
            clamp01(f.contrast * static_cast<double>(cur.pixels[i]) + (1.0 - f.contrast) * mean);
    } else {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < cur.height; ++y)
          for (std::size_t x = 0; x < cur.width; ++x)
            next.at(c, y, x) = clamp01(f.saturation * static_cast<double>(cur.at(c, y, x)) +
                                       (1.0 - f.saturation) * luma(cur, y, x));
    }
    cur = std::move(next);
  }
  return cur;
}

Image normalize(const Image& img, const Normalization& norm) {
  if (img.channels != 3) throw ShapeError("normalize: expects a 3-channel image");
  for (double s : norm.std) {
    if (!(s > 0.0)) throw ArgumentError("normalize: std components must be > 0");
  }
  Image out = img;
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out.pixels[c * plane + i] = static_cast<float>(
          (static_cast<double>(img.pixels[c * plane + i]) - norm.mean[c]) / norm.std[c]);
  return out;
}

ImageBatch gather(const Dataset& data, std::span<const std::size_t> indices) {
  ImageBatch b;
  b.images.reserve(indices.size());
  for (auto i : indices) {
    b.images.push_back(data.image(i));
    b.labels.push_back(data.labels.at(i));
    b.sample_ids.push_back(i);
  }
  return b;
}

std::vector<Image> augment_for_pods(const Image& img, const AugmentationSpec& spec, int k,
                                    std::uint64_t epoch, std::uint64_t sample_id) {
  if (k < 1) throw ArgumentError("augment_for_pods: k must be >= 1");
  auto geo = derive_rng({spec.seed, epoch, sample_id, 0});
  Image base = img;
  const int size = spec.crop_size > 0 ? spec.crop_size : static_cast<int>(img.height);
  if (spec.pad > 0 || size != static_cast<int>(img.height) || size != static_cast<int>(img.width)) {
    base = pad_random_crop(base, spec.pad, size, geo);
  }
  if (spec.hflip_prob > 0.0) base = random_hflip(base, spec.hflip_prob, geo);

  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(k));
  if (spec.routing == PodRouting::Identical || !spec.jitter) {
    out.assign(static_cast<std::size_t>(k), base);
    return out;
  }
  if (spec.routing == PodRouting::SharedJitter) {
    auto jr = derive_rng({spec.seed, epoch, sample_id, 1});
    out.assign(static_cast<std::size_t>(k), color_jitter(base, draw_jitter(*spec.jitter, jr)));
    return out;
  }
  for (int p = 0; p < k; ++p) {
    auto jr = derive_rng({spec.seed, epoch, sample_id, 1 + static_cast<std::uint64_t>(p)});
    out.push_back(color_jitter(base, draw_jitter(*spec.jitter, jr)));
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(std::span<const Image> images) {
  if (images.empty()) throw ArgumentError("stack_images: empty batch");
  const auto& f = images.front();
  std::vector<T> data;
  data.reserve(images.size() * f.pixels.size());
  for (const auto& img : images) {
    if (img.channels != f.channels || img.height != f.height || img.width != f.width) {
      throw ShapeError("stack_images: images differ in shape");
    }
    for (float v : img.pixels) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({images.size(), f.channels, f.height, f.width}, std::move(data));
}

template <typename T>
std::vector<Tensor<T>> make_pod_inputs(const ImageBatch& batch, const AugmentationSpec& spec, int k,
                                       std::uint64_t epoch) {
  if (k < 1) throw ArgumentError("make_pod_inputs: k must be >= 1");
  const auto pods = static_cast<std::size_t>(k);
  std::vector<std::vector<Image>> per_pod(pods);
  for (auto& v : per_pod) v.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto views = augment_for_pods(batch.images[i], spec, k, epoch, batch.sample_ids.at(i));
    for (std::size_t p = 0; p < pods; ++p) per_pod[p].push_back(normalize(views[p], spec.normalize));
  }
  std::vector<Tensor<T>> out;
  out.reserve(pods);
  for (auto& v : per_pod) out.push_back(stack_images<T>(v));
  return out;
}

template <typename T>
Tensor<T> eval_input(const ImageBatch& batch, const Normalization& norm) {
  std::vector<Image> imgs;
  imgs.reserve(batch.size());
  for (const auto& img : batch.images) imgs.push_back(normalize(img, norm));
  return stack_images<T>(imgs);
}

template Tensor<float> stack_images(std::span<const Image>);
template Tensor<double> stack_images(std::span<const Image>);
template std::vector<Tensor<float>> make_pod_inputs(const ImageBatch&, const AugmentationSpec&, int,
                                                    std::uint64_t);
template std::vector<Tensor<double>> make_pod_inputs(const ImageBatch&, const AugmentationSpec&,
                                                     int, std::uint64_t);
template Tensor<float> eval_input(const ImageBatch&, const Normalization&);
template Tensor<double> eval_input(const ImageBatch&, const Normalization&);

}  // namespace multipod
