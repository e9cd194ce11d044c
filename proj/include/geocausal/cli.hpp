#pragma once

// Pipeline orchestration for the command-line tool: run configuration,
// data ingestion, per-command drivers, and persisted outputs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geocausal/geo_core.hpp"
#include "geocausal/interventions.hpp"
#include "geocausal/point_patterns.hpp"

namespace geocausal {

struct FeatureCovariate {
  std::string name;
  std::filesystem::path geojson;
  std::string kind = "points";  // points | polylines
  double decay = decay_defaults::kRoadsRivers;
};

struct PowerComponent {
  std::string covariate;  // name of a loaded covariate layer
  double exponent = 1.0;
};

// baseline: "propensity" (time-averaged fitted intensity), "uniform", or the
// name of a covariate layer. With power components the baseline is
// location-shifted, otherwise just rescaled to `count`.
struct InterventionSpec {
  std::string label;
  std::string baseline = "propensity";
  double count = 1.0;
  std::vector<PowerComponent> power;
  std::optional<MediatorIntervention> mediator;
};

struct RegionSpec {
  std::string label;
  std::optional<Box> box;
  std::optional<std::filesystem::path> geojson;  // both unset: whole window
};

struct CateSpec {
  int pixel_factor = 4;
  std::string moderator;            // covariate layer name, or
  std::filesystem::path moderator_csv;  // per-period panel CSV
  std::string moderator_name;       // name inside the CSV
  std::string basis = "linear";     // intercept | linear | spline
  int spline_df = 3;
  std::string missing = "exclude";  // exclude | zero
};

struct MediatorSpec {
  std::vector<std::string> covariates;
  std::vector<std::string> exits;
  std::string final_mark;
  int spline_df = 0;
  std::string order = "treatment_first";
};

struct RunConfig {
  std::filesystem::path events;
  std::optional<Box> window_box;
  std::optional<std::filesystem::path> window_geojson;
  int nx = 32;
  int ny = 32;
  std::optional<int> T;
  std::vector<std::string> mark_labels;
  std::map<std::string, std::filesystem::path> covariate_rasters;
  std::vector<FeatureCovariate> features;
  std::vector<int> history_lags;
  std::vector<std::string> propensity_covariates;
  int time_spline_df = 0;
  double ridge = 0.0;
  std::optional<double> bandwidth;  // unset: Scott's rule
  Kernel kernel = Kernel::gaussian;
  std::vector<InterventionSpec> interventions;
  std::vector<std::pair<std::string, std::string>> contrasts;
  std::vector<int> L{1};
  std::vector<RegionSpec> regions;
  CateSpec cate;
  std::optional<MediatorSpec> mediator;
  std::optional<double> truncation_quantile;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  nlohmann::json source;  // the parsed file, hashed into provenance
};

// Relative paths resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// "3", "1..14", "1,2,5" or a mix like "1..3,6".
std::vector<int> parse_lag_list(const std::string& text);

struct RunReport {
  std::string command;
  nlohmann::json results = nlohmann::json::object();
  nlohmann::json diagnostics = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();
  nlohmann::json status = nlohmann::json::array();  // {id, ok, message}
  bool ok = true;
};

nlohmann::json to_json(const RunReport& r);

// Runs one analysis command (fit-propensity, design-intervention, ate, cate,
// mediate) and writes results.json plus surfaces and figures into config.out.
RunReport run(const RunConfig& config, const std::string& command);

// SVG figures keyed by file name, rendered from a results.json payload.
std::map<std::string, std::string> render_figures(const nlohmann::json& results_json);

std::string config_hash(const nlohmann::json& j);

// Full command-line entry point; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace geocausal
