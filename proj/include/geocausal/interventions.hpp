#pragma once

// Stochastic interventions: Poisson treatment processes with a user-chosen
// intensity, mediator probability shifts, and samplers for the oracle.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geocausal/geo_core.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/rng.hpp"

namespace geocausal {

// A Poisson process on the window with intensity `intensity` (events/km^2).
class TreatmentIntervention {
 public:
  TreatmentIntervention() = default;
  // Validates intensity >= 0 on active cells and records its integral.
  explicit TreatmentIntervention(std::shared_ptr<const Raster> intensity);

  const Raster& intensity() const { return *intensity_; }
  const std::shared_ptr<const Raster>& intensity_ptr() const { return intensity_; }
  double expected_count() const { return expected_count_; }
  // Cumulative cell masses (intensity * area) in row-major order.
  const std::vector<double>& cumulative_mass() const { return cumulative_; }

 private:
  std::shared_ptr<const Raster> intensity_;
  double expected_count_ = 0.0;
  std::vector<double> cumulative_;
};

struct PowerDensitySpec {
  std::vector<Raster> components;
  std::vector<double> exponents;
};

struct MediatorIntervention {
  double delta = 1.0;
  std::string target_mark;
  void validate() const;
};

// Treatment component per intervention period (one shared raster or one per
// period, oldest first) and an optional mediator shift; nullopt mediator is
// pass-through (the fitted mediator score).
struct InterventionPair {
  std::vector<TreatmentIntervention> treatment;
  std::optional<MediatorIntervention> mediator;
  int L = 1;
  std::string label;

  // Intervention for position k = 0..L-1 inside the window (k = 0 is t-L+1).
  const TreatmentIntervention& at(int k) const;
  void validate() const;
};

InterventionPair make_pair_intervention(TreatmentIntervention treatment, int L,
                                        std::optional<MediatorIntervention> mediator = std::nullopt,
                                        std::string label = {});

// count * baseline; baseline must integrate to 1 within 1e-9.
TreatmentIntervention intensified(const Raster& baseline, double count);
// prod d_i^alpha_i normalized to unit mass (computed in log space).
Raster power_density(const PowerDensitySpec& spec, const GridPtr& grid);
// count * normalize(baseline * power). A constant power raster gives
// intensified(normalize(baseline), count) exactly.
TreatmentIntervention location_shift(const Raster& baseline, const Raster& power, double count);

// Odds multiplication: delta p / (delta p + 1 - p).
double incremental_shift(double p, double delta);

double log_intervention_density(const TreatmentIntervention& iv, const PointPattern& pattern);

// N ~ Poisson(expected count); cells by multinomial on cell mass, uniform
// within the cell (rejection against a polygon window).
PointPattern sample_pattern(const TreatmentIntervention& iv, int t, Rng& rng);
// One categorical draw per point from its probability vector.
std::vector<int> sample_marks(const std::vector<std::vector<double>>& probabilities, Rng& rng);

}  // namespace geocausal
