#include "multipod/serialization.hpp"

#include <functional>

#include "multipod/errors.hpp"

namespace multipod {

using nlohmann::json;

std::string FieldErrors::joined() const {
  std::string out;
  for (const auto& e : errors_) {
    if (!out.empty()) out += "; ";
    out += e;
  }
  return out;
}

json to_json(const MultiPodSpec& spec) {
  return json{{"pods", spec.pods},
              {"family", std::string(to_string(spec.base.family))},
              {"n", spec.base.blocks_per_stage},
              {"fusion", std::string(to_string(spec.fusion))},
              {"combine_mode", std::string(to_string(spec.combine_mode))},
              {"classes", spec.classes},
              {"seeds", spec.seeds}};
}

json to_json(const Normalization& norm) { return json{{"mean", norm.mean}, {"std", norm.std}}; }

json to_json(const AugmentationSpec& spec) {
  json j{{"pad", spec.pad},
         {"crop_size", spec.crop_size},
         {"hflip_prob", spec.hflip_prob},
         {"normalize", to_json(spec.normalize)},
         {"routing", std::string(to_string(spec.routing))},
         {"seed", spec.seed}};
  if (spec.jitter) {
    const auto& jt = *spec.jitter;
    j["jitter"] = json{{"brightness", {jt.brightness.lo, jt.brightness.hi}},
                       {"contrast", {jt.contrast.lo, jt.contrast.hi}},
                       {"saturation", {jt.saturation.lo, jt.saturation.hi}},
                       {"random_order", jt.random_order}};
  } else {
    j["jitter"] = nullptr;
  }
  return j;
}

json to_json(const TrainingSchedule& s) {
  return json{{"base_lr", s.base_lr},   {"milestones", s.milestones},
              {"decay", s.decay},       {"epochs", s.epochs},
              {"batch_size", s.batch_size}, {"momentum", s.momentum},
              {"weight_decay", s.weight_decay}};
}

json to_json(const SyntheticSpec& s) {
  return json{{"classes", s.classes},
              {"samples", s.samples},
              {"size", s.size},
              {"seed", s.seed},
              {"symmetric", s.symmetric}};
}

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads j[key] into out when present; type errors are recorded.
template <typename V>
void read(const json& j, const std::string& path, const char* key, V& out, FieldErrors& errors) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const json::exception&) {
    errors.add(join(path, key), "has the wrong type (" + std::string(it->type_name()) + ")");
  }
}

template <typename E>
void read_enum(const json& j, const std::string& path, const char* key, E& out,
               E (*parse)(std::string_view), FieldErrors& errors) {
  std::string text;
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_string()) {
    errors.add(join(path, key), "must be a string");
    return;
  }
  try {
    out = parse(it->get<std::string>());
  } catch (const Error& e) {
    errors.add(join(path, key), e.what());
  }
}

bool require_object(const json& j, const std::string& path, FieldErrors& errors) {
  if (j.is_object()) return true;
  errors.add(path.empty() ? "<root>" : path, "must be an object");
  return false;
}

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> known, FieldErrors& errors) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) errors.add(join(path, it.key()), "unknown field");
  }
}

// Runs a validate() that throws and records its message under `path`.
void check(const std::string& path, const std::function<void()>& fn, FieldErrors& errors) {
  try {
    fn();
  } catch (const Error& e) {
    errors.add(path.empty() ? "<root>" : path, e.what());
  }
}

FactorRange range_from_json(const json& j, const std::string& path, FactorRange fallback,
                            FieldErrors& errors) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    errors.add(path, "must be a [lo, hi] pair of numbers");
    return fallback;
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

MultiPodSpec model_spec_from_json(const json& j, const std::string& path, FieldErrors& errors) {
  MultiPodSpec spec;
  const std::size_t prior = errors.list().size();
  if (!require_object(j, path, errors)) return spec;
  reject_unknown(j, path,
                 {"pods", "family", "n", "fusion", "combine_mode", "classes", "seeds"},
                 errors);
  read(j, path, "pods", spec.pods, errors);
  read_enum(j, path, "family", spec.base.family, &parse_pod_family, errors);
  if (!j.contains("n")) {
    spec.base.blocks_per_stage = spec.base.family == PodFamily::ResNetCifar ? 3 : 2;
  }
  read(j, path, "n", spec.base.blocks_per_stage, errors);
  read_enum(j, path, "fusion", spec.fusion, &parse_fusion, errors);
  read_enum(j, path, "combine_mode", spec.combine_mode, &parse_combine_mode, errors);
  read(j, path, "classes", spec.classes, errors);
  if (j.contains("seeds")) {
    read(j, path, "seeds", spec.seeds, errors);
  } else if (spec.pods >= 1) {
    spec.seeds.clear();
    for (int i = 1; i <= spec.pods; ++i) spec.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  if (errors.list().size() == prior) check(path, [&] { spec.validate(); }, errors);
  return spec;
}

Normalization normalization_from_json(const json& j, const std::string& path, FieldErrors& errors) {
  Normalization n;
  if (!require_object(j, path, errors)) return n;
  reject_unknown(j, path, {"mean", "std"}, errors);
  read(j, path, "mean", n.mean, errors);
  read(j, path, "std", n.std, errors);
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(n.std[c] > 0.0)) errors.add(join(path, "std"), "entries must be > 0");
  }
  return n;
}

AugmentationSpec augmentation_from_json(const json& j, const std::string& path,
                                        FieldErrors& errors) {
  AugmentationSpec spec;
  if (!require_object(j, path, errors)) return spec;
  reject_unknown(j, path, {"pad", "crop_size", "hflip_prob", "jitter", "normalize", "routing", "seed"},
                 errors);
  read(j, path, "pad", spec.pad, errors);
  read(j, path, "crop_size", spec.crop_size, errors);
  read(j, path, "hflip_prob", spec.hflip_prob, errors);
  read(j, path, "seed", spec.seed, errors);
  read_enum(j, path, "routing", spec.routing, &parse_pod_routing, errors);
  if (auto it = j.find("normalize"); it != j.end()) {
    if (it->is_string()) {
      const auto name = it->get<std::string>();
      if (name == "cifar10") {
        spec.normalize = Normalization::cifar10();
      } else if (name == "imagenet") {
        spec.normalize = Normalization::imagenet();
      } else if (name == "none") {
        spec.normalize = Normalization{};
      } else {
        errors.add(join(path, "normalize"), "unknown preset '" + name + "'");
      }
    } else {
      spec.normalize = normalization_from_json(*it, join(path, "normalize"), errors);
    }
  }
  if (auto it = j.find("jitter"); it != j.end() && !it->is_null()) {
    const std::string jp = join(path, "jitter");
    JitterSpec jt;
    if (require_object(*it, jp, errors)) {
      reject_unknown(*it, jp, {"brightness", "contrast", "saturation", "random_order"}, errors);
      if (it->contains("brightness"))
        jt.brightness = range_from_json((*it)["brightness"], join(jp, "brightness"), jt.brightness, errors);
      if (it->contains("contrast"))
        jt.contrast = range_from_json((*it)["contrast"], join(jp, "contrast"), jt.contrast, errors);
      if (it->contains("saturation"))
        jt.saturation = range_from_json((*it)["saturation"], join(jp, "saturation"), jt.saturation, errors);
      read(*it, jp, "random_order", jt.random_order, errors);
    }
    spec.jitter = jt;
  }
  return spec;
}

TrainingSchedule schedule_from_json(const json& j, const std::string& path, FieldErrors& errors) {
  TrainingSchedule s;
  const std::size_t prior = errors.list().size();
  if (!require_object(j, path, errors)) return s;
  if (auto it = j.find("preset"); it != j.end()) {
    const auto name = it->is_string() ? it->get<std::string>() : std::string();
    if (name == "cifar") {
      s = TrainingSchedule::cifar_recipe();
    } else if (name == "imagenet") {
      s = TrainingSchedule::imagenet_recipe();
    } else {
      errors.add(join(path, "preset"), "must be \"cifar\" or \"imagenet\"");
    }
  }
  reject_unknown(j, path,
                 {"preset", "base_lr", "milestones", "decay", "epochs", "batch_size", "momentum",
                  "weight_decay"},
                 errors);
  read(j, path, "base_lr", s.base_lr, errors);
  read(j, path, "milestones", s.milestones, errors);
  read(j, path, "decay", s.decay, errors);
  read(j, path, "epochs", s.epochs, errors);
  read(j, path, "batch_size", s.batch_size, errors);
  read(j, path, "momentum", s.momentum, errors);
  read(j, path, "weight_decay", s.weight_decay, errors);
  if (errors.list().size() == prior) check(path, [&] { s.validate(); }, errors);
  return s;
}

SyntheticSpec synthetic_from_json(const json& j, const std::string& path, FieldErrors& errors) {
  SyntheticSpec s;
  if (!require_object(j, path, errors)) return s;
  reject_unknown(j, path, {"classes", "samples", "size", "seed", "symmetric"}, errors);
  read(j, path, "classes", s.classes, errors);
  read(j, path, "samples", s.samples, errors);
  read(j, path, "size", s.size, errors);
  read(j, path, "seed", s.seed, errors);
  read(j, path, "symmetric", s.symmetric, errors);
  if (s.classes < 1) errors.add(join(path, "classes"), "must be >= 1");
  if (s.samples < 1) errors.add(join(path, "samples"), "must be >= 1");
  if (s.size < 4) errors.add(join(path, "size"), "must be >= 4");
  return s;
}

MultiPodSpec parse_model_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("model spec is not valid JSON: ") + e.what());
  }
  FieldErrors errors;
  auto spec = model_spec_from_json(j, "", errors);
  if (!errors.empty()) throw ArgumentError("invalid model spec: " + errors.joined());
  return spec;
}

}  // namespace multipod
