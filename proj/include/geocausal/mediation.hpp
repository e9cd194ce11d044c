#pragma once

// Mediator score as a chain of logistic stages over mark categories, the
// mediator part of the weights, and total / direct / indirect effects.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geocausal/ate.hpp"
#include "geocausal/interventions.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/regression.hpp"
#include "geocausal/splines.hpp"

namespace geocausal {

// Stages are visited in order; at stage k a point either leaves with mark
// exits[k] (y = 0) or continues (y = 1). Passing the last stage gives
// final_mark. Two stages with exits {none, civilian} and final military
// encode "classifiable?" then "military vs civilian"; one stage is the
// binary-mediator case.
struct MediatorTree {
  std::vector<std::string> exits;
  std::string final_mark;
};

struct MediatorFitOptions {
  GlmOptions glm;
  int spline_df = 0;  // > 1 expands each covariate into a natural cubic basis
};

struct MediatorStage {
  std::string exit_mark;
  std::vector<double> coefficients;  // intercept, then features
  double deviance = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t points = 0;
};

class MediatorScoreModel {
 public:
  MediatorScoreModel(std::vector<std::string> mark_labels, std::vector<std::string> covariates,
                     std::vector<std::optional<NaturalCubicBasis>> feature_bases, MediatorTree tree,
                     std::vector<MediatorStage> stages);

  const std::vector<std::string>& mark_labels() const { return mark_labels_; }
  const std::vector<std::string>& covariates() const { return covariates_; }
  const MediatorTree& tree() const { return tree_; }
  const std::vector<MediatorStage>& stages() const { return stages_; }
  std::size_t feature_count() const;

  // Covariate values at a point of period t (NaN when unavailable).
  std::vector<double> covariates_at(const CovariateStack& stack, Point p) const;
  std::vector<double> features(std::span<const double> covariate_values) const;
  // P(continue) per stage.
  std::vector<double> stage_probabilities(std::span<const double> covariate_values) const;
  // Probabilities indexed by series mark label; the optional shift moves the
  // target category within its stage by odds multiplication.
  std::vector<double> category_probabilities(std::span<const double> covariate_values,
                                             const std::optional<MediatorIntervention>& shift = std::nullopt) const;

 private:
  int mark_index(const std::string& label) const;

  std::vector<std::string> mark_labels_;
  std::vector<std::string> covariates_;
  std::vector<std::optional<NaturalCubicBasis>> bases_;
  MediatorTree tree_;
  std::vector<MediatorStage> stages_;
  std::vector<int> exit_index_;
  int final_index_ = -1;
};

MediatorScoreModel fit_mediator_score(const PatternSeries& series, const std::vector<std::string>& covariate_names,
                                      const MediatorTree& tree, const MediatorFitOptions& options = {});

// Rank AUC; ties get half credit.
double auc(std::span<const double> scores, std::span<const int> labels);
// AUC of each stage's P(continue) on the points of `held_out` that reach it.
std::vector<double> auc_diagnostic(const MediatorScoreModel& model, const PatternSeries& held_out);

// Sum over points of log P(observed mark); unmarked points are an error.
double mediator_log_density(const MediatorScoreModel& model, const MarkedPointPattern& pattern,
                            const CovariateStack& covariates,
                            const std::optional<MediatorIntervention>& shift = std::nullopt);

// Treatment log ratios plus the mediator log ratio for each window position.
std::vector<std::vector<double>> mediation_log_ratios(const PatternSeries& series, std::span<const double> log_e,
                                                      const MediatorScoreModel& model, const InterventionPair& iv);
WeightSeries compute_mediation_weight_series(const PatternSeries& series, std::span<const double> log_e,
                                             const MediatorScoreModel& model, const InterventionPair& iv,
                                             const WeightOptions& options = {});
double compute_mediation_weights(const PatternSeries& series, const FittedPropensity& propensity,
                                 const MediatorScoreModel& model, const InterventionPair& iv, int L, int t);

enum class DecompositionOrder {
  treatment_first,  // middle term (F_W'', F_M')
  mediator_first    // middle term (F_W', F_M'')
};

struct MediationEffects {
  EffectEstimate total, direct, indirect;
  DecompositionOrder order = DecompositionOrder::treatment_first;
  std::string middle_label;
};

MediationEffects estimate_mediation_effects(const PatternSeries& series, const FittedPropensity& propensity,
                                            const MediatorScoreModel& model, const InterventionPair& iv_a,
                                            const InterventionPair& iv_b, const SmoothingSpec& spec,
                                            const Region& region,
                                            DecompositionOrder order = DecompositionOrder::treatment_first,
                                            const WeightOptions& options = {});
// From precomputed pieces (used by the simulation harness).
MediationEffects mediation_from_weights(const WeightSeries& a, const WeightSeries& middle, const WeightSeries& b,
                                        std::span<const double> outcome_integrals, DecompositionOrder order);

nlohmann::json to_json(const MediatorScoreModel& model);
nlohmann::json to_json(const MediationEffects& m);
MediationEffects mediation_effects_from_json(const nlohmann::json& j);

}  // namespace geocausal
