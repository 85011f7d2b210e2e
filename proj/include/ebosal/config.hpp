#pragma once

// Experiment configuration: a nested JSON document (comments allowed) whose
// keys map one-to-one onto the structs below. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebosal/alcycle.hpp"
#include "ebosal/datagen.hpp"

namespace ebosal {

struct TaskConfig {
  GeneratorSpec generator{};
  double mismatch_ratio = 0.3;
  std::uint64_t seed = 0;
  // When set, samples are imported from this CSV instead of generated.
  std::string csv_path;
  double test_fraction = 0.25;
};

struct SweepSpec {
  std::vector<double> delta_k;  // matrix rows
  std::vector<double> delta_u;  // matrix columns
};

struct ExperimentConfig {
  TaskConfig task{};
  ALConfig al{};
  std::uint64_t seed = 0;  // master seed
  int repeats = 3;
  std::vector<Method> methods{Method::ebosal, Method::random, Method::entropy};
  std::string out_dir = "results";
  int jobs = 1;
  std::optional<SweepSpec> sweep;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Fills a default config from the document. Errors carry the offending key path.
ExperimentConfig config_from_json(const nlohmann::json& doc);

// Applies `key.path=value` overrides to a document. The value is parsed as
// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads the file (if any), applies overrides in order, and validates.
ExperimentConfig parse_config(const std::optional<std::filesystem::path>& path,
                              const std::vector<std::string>& overrides = {});

std::shared_ptr<const OpenSetTask> build_task(const TaskConfig& config);

}  // namespace ebosal
