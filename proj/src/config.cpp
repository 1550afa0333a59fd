#include "multipod/config.hpp"

#include <fstream>
#include <sstream>

namespace multipod {

using nlohmann::json;

namespace {

json data_to_json(const DataSource& d) {
  json j = json::object();
  if (d.cifar10) j["cifar10"] = *d.cifar10;
  if (d.synthetic) j["synthetic"] = to_json(*d.synthetic);
  j["eval_samples"] = d.eval_samples;
  j["train_limit"] = d.train_limit;
  j["eval_limit"] = d.eval_limit;
  return j;
}

template <typename V>
void read_field(const json& j, const std::string& path, const char* key, V& out,
                FieldErrors& errors) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const json::exception&) {
    errors.add(path + key, "has the wrong type (" + std::string(it->type_name()) + ")");
  }
}

DataSource data_from_json(const json& j, FieldErrors& errors) {
  DataSource d;
  if (!j.is_object()) {
    errors.add("data", "must be an object");
    return d;
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "cifar10" && k != "synthetic" && k != "eval_samples" && k != "train_limit" &&
        k != "eval_limit") {
      errors.add("data." + k, "unknown field");
    }
  }
  if (auto it = j.find("cifar10"); it != j.end()) {
    if (it->is_string()) {
      d.cifar10 = it->get<std::string>();
    } else {
      errors.add("data.cifar10", "must be a directory path string");
    }
  }
  if (auto it = j.find("synthetic"); it != j.end()) {
    d.synthetic = synthetic_from_json(*it, "data.synthetic", errors);
  }
  if (d.cifar10.has_value() == d.synthetic.has_value()) {
    errors.add("data", "exactly one of \"cifar10\" or \"synthetic\" is required");
  }
  read_field(j, "data.", "eval_samples", d.eval_samples, errors);
  read_field(j, "data.", "train_limit", d.train_limit, errors);
  read_field(j, "data.", "eval_limit", d.eval_limit, errors);
  if (d.eval_samples < 0) errors.add("data.eval_samples", "must be >= 0");
  if (d.train_limit < 0) errors.add("data.train_limit", "must be >= 0");
  if (d.eval_limit < 0) errors.add("data.eval_limit", "must be >= 0");
  return d;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j{{"schema_version", c.schema_version},
         {"model", to_json(c.model)},
         {"data", data_to_json(c.data)},
         {"schedule", to_json(c.schedule)},
         {"augmentation", to_json(c.augmentation)},
         {"output_dir", c.output_dir},
         {"seed", c.seed}};
  j["stop_at_train_accuracy"] =
      c.stop_at_train_accuracy ? json(*c.stop_at_train_accuracy) : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j, FieldErrors& errors) {
  RunConfig c;
  if (!j.is_object()) {
    errors.add("<root>", "must be an object");
    return c;
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "schema_version" && k != "model" && k != "data" && k != "schedule" &&
        k != "augmentation" && k != "output_dir" && k != "seed" && k != "stop_at_train_accuracy") {
      errors.add(k, "unknown field");
    }
  }
  if (!j.contains("schema_version")) {
    errors.add("schema_version", "is required");
  } else {
    read_field(j, "", "schema_version", c.schema_version, errors);
    if (c.schema_version != RunConfig::kSchemaVersion) {
      errors.add("schema_version", "unsupported version " + std::to_string(c.schema_version) +
                                       " (expected " + std::to_string(RunConfig::kSchemaVersion) +
                                       ")");
    }
  }
  if (auto it = j.find("model"); it != j.end()) {
    c.model = model_spec_from_json(*it, "model", errors);
  } else {
    errors.add("model", "is required");
  }
  if (auto it = j.find("data"); it != j.end()) {
    c.data = data_from_json(*it, errors);
  } else {
    errors.add("data", "is required");
  }
  if (auto it = j.find("schedule"); it != j.end()) c.schedule = schedule_from_json(*it, "schedule", errors);
  if (auto it = j.find("augmentation"); it != j.end()) {
    c.augmentation = augmentation_from_json(*it, "augmentation", errors);
  }
  read_field(j, "", "output_dir", c.output_dir, errors);
  read_field(j, "", "seed", c.seed, errors);
  if (auto it = j.find("stop_at_train_accuracy"); it != j.end() && !it->is_null()) {
    if (it->is_number()) {
      c.stop_at_train_accuracy = it->get<double>();
    } else {
      errors.add("stop_at_train_accuracy", "must be a number or null");
    }
  }
  return c;
}

void validate_run_config(const RunConfig& c, FieldErrors& errors) {
  std::size_t h = 32, w = 32;
  int classes = 10;
  if (c.data.cifar10) {
    const std::filesystem::path dir(*c.data.cifar10);
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) {
      errors.add("data.cifar10", "dataset directory '" + dir.string() + "' does not exist");
    } else {
      for (const char* f : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                            "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"}) {
        if (!std::filesystem::exists(dir / f, ec)) {
          errors.add("data.cifar10", "missing file '" + (dir / f).string() + "'");
        }
      }
    }
  } else if (c.data.synthetic) {
    h = w = static_cast<std::size_t>(std::max(1, c.data.synthetic->size));
    classes = c.data.synthetic->classes;
  }
  if (c.model.classes < classes) {
    errors.add("model.classes", "is " + std::to_string(c.model.classes) + " but the dataset has " +
                                    std::to_string(classes) + " classes");
  }
  try {
    c.augmentation.validate(h, w);
  } catch (const Error& e) {
    errors.add("augmentation", e.what());
  }
  if (c.stop_at_train_accuracy &&
      !(*c.stop_at_train_accuracy > 0.0 && *c.stop_at_train_accuracy <= 1.0)) {
    errors.add("stop_at_train_accuracy", "must be in (0, 1]");
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json j;
  FieldErrors errors;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    errors.add(source, std::string("not valid JSON (") + e.what() + ")");
    throw ConfigError(std::move(errors));
  }
  RunConfig c = run_config_from_json(j, errors);
  if (errors.empty()) validate_run_config(c, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    FieldErrors errors;
    errors.add(path.string(), "cannot read config file");
    throw ConfigError(std::move(errors));
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

namespace {

Dataset head_of(const Dataset& d, int limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= d.size()) return d;
  std::vector<std::size_t> idx(static_cast<std::size_t>(limit));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return d.subset(idx);
}

}  // namespace

RunData load_run_data(const DataSource& source) {
  RunData out;
  if (source.cifar10) {
    auto cifar = load_cifar10(*source.cifar10);
    out.train = std::move(cifar.train);
    out.eval = std::move(cifar.test);
  } else if (source.synthetic) {
    out.train = make_synthetic(*source.synthetic, 0);
    SyntheticSpec eval_spec = *source.synthetic;
    eval_spec.samples =
        source.eval_samples > 0 ? source.eval_samples : std::max(1, source.synthetic->samples / 4);
    out.eval = make_synthetic(eval_spec, 1);
  } else {
    throw ArgumentError("data source has neither cifar10 nor synthetic");
  }
  out.train = head_of(out.train, source.train_limit);
  out.eval = head_of(out.eval, source.eval_limit);
  return out;
}

}  // namespace multipod
