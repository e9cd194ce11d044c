#pragma once

// Treatment propensity as an inhomogeneous Poisson intensity fitted on the
// cell-by-period count table, plus pattern log-densities.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geocausal/geo_core.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/regression.hpp"
#include "geocausal/splines.hpp"

namespace geocausal {

struct PropensityOptions {
  GlmOptions glm;
  int time_spline_df = 0;  // 0 disables the time spline
  // Binary per-period flags, each of length T (e.g. a surge indicator).
  std::map<std::string, std::vector<int>> period_indicators;
};

// log lambda_t(cell) = intercept + sum_k coef_k x_k(cell) + spline(t) + indicators(t)
struct IntensityModel {
  double intercept = 0.0;
  std::vector<std::string> covariates;
  std::vector<double> coefficients;
  std::optional<NaturalCubicBasis> time_basis;
  std::vector<double> spline_coefficients;
  std::vector<std::string> indicator_names;
  std::vector<double> indicator_coefficients;

  // Time and indicator contribution for period t (indicators in name order).
  double period_offset(int t, const std::vector<double>& indicators) const;
  void validate() const;
};

struct ConvergenceReport {
  int iterations = 0;
  double deviance = 0.0;
  bool converged = false;
  double gradient_norm = 0.0;
  double gradient_tolerance = 0.0;
  std::vector<double> deviance_trace;
  double ridge = 0.0;
  bool aggregated = false;     // static design collapsed over periods
  double observations = 0.0;   // rows in the fitted table
  std::size_t events_masked = 0;  // events in cells with NODATA covariates
};

class FittedPropensity {
 public:
  FittedPropensity(IntensityModel model, ConvergenceReport report, PropensityOptions options);

  const IntensityModel& model() const { return model_; }
  const ConvergenceReport& report() const { return report_; }
  const PropensityOptions& options() const { return options_; }
  // Indicator values for period t; throws past the fitted horizon.
  std::vector<double> indicators_at(int t) const;

 private:
  IntensityModel model_;
  ConvergenceReport report_;
  PropensityOptions options_;
};

FittedPropensity fit_poisson_intensity(const PatternSeries& series, const std::vector<std::string>& covariate_names,
                                       const PropensityOptions& options = {});

// exp of the linear predictor; NaN (masked) where a covariate is NODATA or the
// cell is outside the window.
Raster predict_intensity(const FittedPropensity& fit, const CovariateStack& covariates, int t);

// Intensities for periods 1..T of a series, shared across periods whose
// linear predictor cannot differ.
std::vector<std::shared_ptr<const Raster>> predict_series(const FittedPropensity& fit, const PatternSeries& series);

// Poisson log-density relative to the unit-rate process on the window, up to
// the constant |window|: sum of log lambda at event cells minus its integral.
double log_pattern_density(const Raster& intensity, const PointPattern& pattern);
// Same, with the intensity integral supplied (it is shared by many patterns).
double log_pattern_density(const Raster& intensity, double integral, const PointPattern& pattern);

struct DiagnosticRow {
  int t = 0;
  double observed = 0.0;
  double expected = 0.0;
  double residual = 0.0;
};

struct FitDiagnostics {
  int training_periods = 0;
  std::vector<DiagnosticRow> in_sample;       // full fit, all periods
  std::vector<DiagnosticRow> out_of_sample;   // training fit, held-out periods
  double in_sample_mean = 0.0;
  double in_sample_se = 0.0;
  double out_of_sample_mean = 0.0;
  double out_of_sample_se = 0.0;
  double trend_slope = 0.0;  // OLS slope of held-out residuals on t
  double trend_z = 0.0;
  bool trend_flagged = false;  // |trend_z| > 3
};

FitDiagnostics fit_diagnostics(const FittedPropensity& fit, const PatternSeries& series,
                               const std::vector<std::string>& covariate_names, double split = 0.8);

nlohmann::json to_json(const FittedPropensity& fit);
FittedPropensity propensity_from_json(const nlohmann::json& j);
void save_propensity(const std::filesystem::path& path, const FittedPropensity& fit);
FittedPropensity load_propensity(const std::filesystem::path& path);

nlohmann::json to_json(const FitDiagnostics& diag);

}  // namespace geocausal
