#pragma once

// Importance weights for stochastic interventions, weighted smoothed outcome
// integrals, IPW / Hajek contrasts with variance bounds and intervals.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geocausal/geo_core.hpp"
#include "geocausal/interventions.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/propensity.hpp"

namespace geocausal {

enum class EstimatorMode { ipw, hajek };

struct WeightOptions {
  // Cap weights at this upper quantile of the weight series (e.g. 0.99).
  std::optional<double> truncation_quantile;
};

// Weights for t = L..T, stored at index t - L.
struct WeightSeries {
  int L = 1;
  int T = 0;
  std::vector<double> log_weights;
  std::vector<double> weights;              // truncated when truncation is on
  std::vector<double> untruncated;          // raw exp(log_weights)
  std::optional<double> truncation_quantile;
  double truncation_cap = 0.0;
  std::size_t truncated_count = 0;
  double ess = 0.0;

  std::size_t size() const { return weights.size(); }
  double weight(int t) const { return weights.at(static_cast<std::size_t>(t - L)); }
};

// Sum over t' in [t-L+1, t] of the per-period log ratios; validates finiteness.
WeightSeries weights_from_log_ratios(const std::vector<std::vector<double>>& log_ratio_by_position, int L,
                                     const WeightOptions& options = {});
WeightSeries weights_from_log_weights(std::vector<double> log_weights, int L, int T, const WeightOptions& options = {});

double effective_sample_size(std::span<const double> weights);

// log e_t(W_t) for t = 1..T (index t-1).
std::vector<double> propensity_log_densities(const PatternSeries& series,
                                             const std::vector<std::shared_ptr<const Raster>>& intensities);

// log f_k(W_t') - log e_t'(W_t') for every window position k and period t'.
std::vector<std::vector<double>> treatment_log_ratios(const PatternSeries& series, std::span<const double> log_e,
                                                      const InterventionPair& iv);

WeightSeries compute_weight_series(const PatternSeries& series, std::span<const double> log_e,
                                   const InterventionPair& iv, const WeightOptions& options = {});
// Weight of a single period t >= L.
double compute_weights(const PatternSeries& series, const FittedPropensity& propensity, const InterventionPair& iv,
                       int L, int t);

// Integral over the region of the smoothed outcome pattern, t = 1..T (index t-1).
std::vector<double> outcome_integrals(const PatternSeries& series, const SmoothingSpec& spec, const Region& region);

double expected_events(const WeightSeries& weights, std::span<const double> outcome_integrals, EstimatorMode mode);
double expected_events(const PatternSeries& series, const WeightSeries& weights, const SmoothingSpec& spec,
                       const Region& region, EstimatorMode mode);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

inline constexpr double kZ90 = 1.6448536269514722;
inline constexpr double kZ95 = 1.959963984540054;

struct EffectEstimate {
  int L = 1;
  std::string region;
  std::string label_a;
  std::string label_b;
  double ipw = 0.0;
  double hajek = 0.0;
  double n_ipw_a = 0.0, n_ipw_b = 0.0;
  double n_hajek_a = 0.0, n_hajek_b = 0.0;
  double sigma2_star = 0.0;
  double hajek_var = 0.0;
  bool hajek_fallback = false;
  Interval ci90_ipw, ci95_ipw, ci90_hajek, ci95_hajek;
  double ess_a = 0.0, ess_b = 0.0;
  std::vector<double> per_t;  // tau_t = (w'_t - w''_t) * outcome, t = L..T
  std::optional<double> ipw_untruncated;
  std::optional<double> hajek_untruncated;
  std::vector<std::string> warnings;

  friend bool operator==(const EffectEstimate&, const EffectEstimate&) = default;
};

// sigma* = mean of squared contributions.
double variance_bound(std::span<const double> per_t);

struct HajekVariance {
  double value = 0.0;
  bool fallback = false;
};
// Sandwich variance from per-period (outcome * w', outcome * w'', w', w'').
HajekVariance hajek_variance(std::span<const double> wa, std::span<const double> wb, std::span<const double> outcomes,
                             double n_hajek_a, double n_hajek_b, double sigma2_star);

// Contrast of two weight series against the same outcome integrals (t = 1..T).
EffectEstimate contrast(const WeightSeries& a, const WeightSeries& b, std::span<const double> outcome_integrals);

EffectEstimate estimate_ate(const PatternSeries& series, const FittedPropensity& propensity, const InterventionPair& iv_a,
                            const InterventionPair& iv_b, const SmoothingSpec& spec, const Region& region,
                            const WeightOptions& options = {});

// Mean over t of w_t * smoothed outcome density (Hajek: divided by the mean weight).
Raster weighted_mean_surface(const PatternSeries& series, const WeightSeries& weights, const SmoothingSpec& spec,
                             EstimatorMode mode);

struct BandShare {
  double distance = 0.0;
  double share = 0.0;
};
// Share of the integrated surface lying within each distance band [0, d).
std::vector<BandShare> effect_by_distance_band(const Raster& effect_surface, const DistanceMap& distances,
                                               std::span<const double> bands);

nlohmann::json to_json(const EffectEstimate& e);
EffectEstimate effect_from_json(const nlohmann::json& j);

}  // namespace geocausal
