#pragma once

// JSON mappings for the declarative types. Parsing reports the document
// path of every offending field.

#include <string>
#include <vector>

#include "json.hpp"
#include "multipod/data.hpp"
#include "multipod/model.hpp"
#include "multipod/train.hpp"

namespace multipod {

/// Collects "path: message" diagnostics while walking a document.
class FieldErrors {
 public:
  void add(const std::string& path, const std::string& message) {
    errors_.push_back(path + ": " + message);
  }
  bool empty() const { return errors_.empty(); }
  const std::vector<std::string>& list() const { return errors_; }
  std::string joined() const;

 private:
  std::vector<std::string> errors_;
};

nlohmann::json to_json(const MultiPodSpec& spec);
nlohmann::json to_json(const AugmentationSpec& spec);
nlohmann::json to_json(const TrainingSchedule& schedule);
nlohmann::json to_json(const Normalization& norm);
nlohmann::json to_json(const SyntheticSpec& spec);

// Each parser appends to `errors` rather than throwing and returns a
// best-effort value.
MultiPodSpec model_spec_from_json(const nlohmann::json& j, const std::string& path,
                                  FieldErrors& errors);
AugmentationSpec augmentation_from_json(const nlohmann::json& j, const std::string& path,
                                        FieldErrors& errors);
TrainingSchedule schedule_from_json(const nlohmann::json& j, const std::string& path,
                                    FieldErrors& errors);
Normalization normalization_from_json(const nlohmann::json& j, const std::string& path,
                                      FieldErrors& errors);
SyntheticSpec synthetic_from_json(const nlohmann::json& j, const std::string& path,
                                  FieldErrors& errors);

/// Throwing convenience wrapper (ArgumentError listing every field error).
MultiPodSpec parse_model_spec(const std::string& json_text);

}  // namespace multipod
