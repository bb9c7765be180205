#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crt/analysis.hpp"
#include "crt/core_data.hpp"
#include "crt/sensitivity.hpp"
#include "crt/simulation.hpp"

namespace crt {

inline constexpr const char* kSoftwareName = "crtdr";
inline constexpr const char* kSoftwareVersion = "0.1.0";

struct SensitivitySettings {
  std::vector<double> delta_grid{0, 1, 2, 3, 4};
  std::vector<double> gamma_grid;  // empty = 0, 0.25, ..., 10
  std::optional<BiasComponents> components;  // overrides estimation from data
};

struct AnalysisConfig {
  std::string data_path;  // resolved against the config file's directory
  CsvSchema schema;
  double randomization_probability = 0.5;
  bool full_enrollment = true;
  AnalysisOptions options;
  bool seed_given = false;
  SensitivitySettings sensitivity;
};

// Throws ValidationError on malformed or unknown fields.
AnalysisConfig parse_analysis_config(const nlohmann::json& j, const std::string& base_dir);
AnalysisConfig load_analysis_config(const std::string& path);

struct ScenarioFile {
  ScenarioConfig scenario;
  bool sensitivity_study = false;
};

ScenarioFile parse_scenario(const nlohmann::json& j);
ScenarioFile load_scenario(const std::string& path);

LearnerSpec parse_learner(const nlohmann::json& j, LearnerTarget target);

nlohmann::json read_json_file(const std::string& path);

nlohmann::json estimate_json(const EstimateResult& e);
EstimateResult estimate_from_json(const nlohmann::json& j);
nlohmann::json diagnostics_json(const AnalysisDiagnostics& d);
nlohmann::json dataset_summary_json(const DatasetSummary& s);
nlohmann::json bias_components_json(const BiasComponents& c);
nlohmann::json tipping_json(const TippingPointResult& t);

// ISO-8601 UTC time of the call.
std::string utc_timestamp();

}  // namespace crt
