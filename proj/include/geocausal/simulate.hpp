#pragma once

// Synthetic spatiotemporal data with known carryover / spillover, a Monte
// Carlo oracle for intervention estimands, and the coverage harness.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geocausal/ate.hpp"
#include "geocausal/cate.hpp"
#include "geocausal/interventions.hpp"
#include "geocausal/mediation.hpp"
#include "geocausal/point_patterns.hpp"

namespace geocausal {

// Static covariate surface. Types: constant (value), gradient_x / gradient_y
// (value at the south-west edge + slope per km), bump (height * Gaussian of
// width sd around center), checker (+-height on size-km squares).
struct SyntheticCovariate {
  std::string name;
  std::string type = "gradient_x";
  double value = 0.0;
  double slope = 0.0;
  double height = 1.0;
  Point center;
  double sd = 1.0;
  double size = 4.0;
};

struct MediatorTruth {
  std::vector<std::string> labels;
  MediatorTree tree;
  std::vector<std::string> covariates;
  std::vector<std::vector<double>> stages;  // intercept then one coefficient per covariate
};

struct SyntheticDGP {
  Box window{0.0, 0.0, 32.0, 32.0};
  int nx = 32;
  int ny = 32;
  std::vector<SyntheticCovariate> covariates;

  // True propensity: log lambda = intercept + sum coef * covariate
  // (+ history_coef * exp(-6 d) to the previous period's treatment events).
  double propensity_intercept = 0.0;
  std::vector<std::pair<std::string, double>> propensity_coefficients;
  double history_coef = 0.0;

  // Outcome intensity: mu0 = exp(intercept + sum coef * covariate), plus for
  // each lag l = 0..carryover.size()-1 and treatment event s of period t-l,
  // (c_l + c_M [mark(s) == bonus_mark]) * A(w) * k_rho(w - s) with
  // A = 1 + modifier_coef * modifier.
  double outcome_intercept = 0.0;
  std::vector<std::pair<std::string, double>> outcome_coefficients;
  std::vector<double> carryover;
  double spillover_range = 1.0;  // Gaussian sd in km; 0 keeps mass in the event's cell
  double mediator_bonus = 0.0;
  std::string bonus_mark;
  std::string effect_modifier;  // covariate name, empty for none
  double modifier_coef = 0.0;

  std::optional<MediatorTruth> mediator;

  void validate() const;
};

SyntheticDGP default_dgp();
SyntheticDGP dgp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticDGP& dgp);
SyntheticDGP load_dgp(const std::filesystem::path& path);

// A DGP with its rasters and per-cell probabilities built on the grid.
class DgpModel {
 public:
  explicit DgpModel(SyntheticDGP dgp);

  const SyntheticDGP& spec() const { return dgp_; }
  const GridPtr& grid() const { return grid_; }
  const CovariatesPtr& covariates() const { return covariates_; }
  std::vector<std::string> covariate_names() const;
  const TreatmentIntervention& propensity() const { return propensity_; }
  const TreatmentIntervention& baseline_outcome() const { return baseline_; }
  const std::vector<double>& modifier() const { return modifier_; }
  std::vector<std::string> mark_labels() const;
  bool has_mediator() const { return mediator_model_.has_value(); }
  const MediatorScoreModel& mediator_model() const { return *mediator_model_; }
  // Category probabilities for an event in cell c (optionally shifted).
  std::vector<double> mark_probabilities(std::size_t cell, const std::optional<MediatorIntervention>& shift) const;
  int bonus_index() const { return bonus_index_; }

  // Expected outcome mass inside each region from one event at s with unit
  // coefficient: sum over cells of the region of A(c) k_rho(c - s) area(c).
  void spill_masses(Point s, const std::vector<const Region*>& regions, std::vector<double>& out) const;

  // Lag coefficient for an event with the given mark.
  double event_coefficient(int lag, int mark) const;

 private:
  SyntheticDGP dgp_;
  GridPtr grid_;
  CovariatesPtr covariates_;
  TreatmentIntervention propensity_;
  TreatmentIntervention baseline_;
  std::vector<double> modifier_;  // A(c)
  double modifier_max_ = 1.0;
  std::optional<MediatorScoreModel> mediator_model_;
  int bonus_index_ = -1;

  friend class OutcomeSampler;
};

PatternSeries simulate_series(const DgpModel& model, int T, std::uint64_t seed);
PatternSeries simulate_series(const SyntheticDGP& dgp, int T, std::uint64_t seed);

struct OracleResult {
  double value = 0.0;
  double se = 0.0;
  std::size_t draws = 0;
};

// Expected outcome count in each region averaged over t = L..T of `history`
// when the L periods before and including t follow `iv`. Periods before the
// window come from `history` (or are empty when history is null). Treatment
// and marks are drawn n_draws times per window position; outcomes are
// integrated analytically.
std::vector<OracleResult> mc_oracle(const DgpModel& model, const InterventionPair& iv,
                                    const std::vector<const Region*>& regions, std::size_t n_draws, std::uint64_t seed,
                                    const PatternSeries* history = nullptr);
OracleResult mc_oracle(const DgpModel& model, const InterventionPair& iv, const Region& region, std::size_t n_draws,
                       std::uint64_t seed, const PatternSeries* history = nullptr);

// Difference of two oracles (independent draws); history cancels.
OracleResult mc_oracle_contrast(const DgpModel& model, const InterventionPair& a, const InterventionPair& b,
                                const Region& region, std::size_t n_draws, std::uint64_t seed);

// mc_oracle without history by exact cell quadrature (no draws): baseline
// plus the intervention-driven mass, per region.
std::vector<double> exact_intervention_effect(const DgpModel& model, const InterventionPair& iv,
                                              const std::vector<const Region*>& regions);

// Intervention recipe used by experiments: count * shape, shape either the
// normalized true propensity or uniform, plus an optional mediator shift.
struct InterventionRecipe {
  double count = 1.0;
  std::string shape = "propensity";  // or "uniform"
  std::optional<MediatorIntervention> mediator;
  std::string label;
};

InterventionPair build_intervention(const DgpModel& model, const InterventionRecipe& recipe, int L);

struct ExperimentConfig {
  std::string estimand = "ate";  // ate | indirect | cate
  std::vector<int> T_values{500, 2000, 5000};
  int L = 3;
  InterventionRecipe a{2.0, "propensity", std::nullopt, "high"};
  InterventionRecipe b{1.0, "propensity", std::nullopt, "low"};
  std::optional<Box> region;  // whole window when unset
  // b_T = bandwidth * (T / bandwidth_reference_T)^(-bandwidth_exponent);
  // bandwidth 0 uses Scott's rule per replicate and T instead.
  double bandwidth = 4.0;
  double bandwidth_reference_T = 500.0;
  double bandwidth_exponent = 0.5;
  Kernel kernel = Kernel::gaussian;
  std::size_t oracle_draws = 200000;
  int pixel_factor = 4;       // cate
  std::optional<double> truncation_quantile;
  int replicates = 200;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

struct CoverageRow {
  int T = 0;
  std::string estimator;  // ipw | hajek
  double truth = 0.0;
  double truth_se = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double coverage95 = 0.0;
  double coverage90 = 0.0;
  double mean_halfwidth95 = 0.0;
  double rejection95 = 0.0;  // share of CIs excluding zero
  double sign_correct = 0.0;
  double mean_ess_a = 0.0;
  double mean_ess_b = 0.0;
  int replicates = 0;
  int failures = 0;
};

struct CoverageTable {
  std::string estimand;
  std::vector<CoverageRow> rows;
  const CoverageRow& row(int T, const std::string& estimator) const;
};

CoverageTable coverage_experiment(const SyntheticDGP& dgp, const ExperimentConfig& config, std::uint64_t seed);

nlohmann::json to_json(const CoverageTable& t);
std::string to_csv(const CoverageTable& t);

}  // namespace geocausal
