#include "geocausal/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geocausal/errors.hpp"
#include "geocausal/propensity.hpp"

namespace geocausal {

TreatmentIntervention::TreatmentIntervention(std::shared_ptr<const Raster> intensity) : intensity_(std::move(intensity)) {
  if (!intensity_ || !intensity_->grid()) throw InvalidArgument("TreatmentIntervention: missing intensity raster");
  const RasterGrid& g = *intensity_->grid();
  cumulative_.resize(g.size());
  double run = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (g.active(c)) {
      const double v = (*intensity_)[c];
      if (!std::isfinite(v) || v < 0.0) {
        throw InvalidArgument("TreatmentIntervention: intensity must be finite and nonnegative on the window");
      }
      run += v * g.cell_area(c);
    }
    cumulative_[c] = run;
  }
  expected_count_ = integrate_raster(*intensity_);
}

void MediatorIntervention::validate() const {
  if (!(delta > 0.0) || std::isnan(delta)) throw InvalidArgument("mediator intervention: delta must be positive");
  if (target_mark.empty()) throw InvalidArgument("mediator intervention: target mark is required");
}

const TreatmentIntervention& InterventionPair::at(int k) const {
  if (k < 0 || k >= L) throw InvalidArgument("InterventionPair: period index out of range");
  return treatment.size() == 1 ? treatment.front() : treatment[static_cast<std::size_t>(k)];
}

void InterventionPair::validate() const {
  if (L < 1) throw InvalidArgument("intervention: L must be >= 1");
  if (treatment.size() != 1 && treatment.size() != static_cast<std::size_t>(L)) {
    throw InvalidArgument("intervention: give one treatment intensity or one per period");
  }
  const RasterGrid& g = *treatment.front().intensity().grid();
  for (const auto& iv : treatment) require_same_grid(*iv.intensity().grid(), g, "intervention intensities");
  if (mediator) mediator->validate();
}

InterventionPair make_pair_intervention(TreatmentIntervention treatment, int L, std::optional<MediatorIntervention> mediator,
                                        std::string label) {
  InterventionPair p;
  p.treatment.push_back(std::move(treatment));
  p.mediator = std::move(mediator);
  p.L = L;
  p.label = std::move(label);
  p.validate();
  return p;
}

TreatmentIntervention intensified(const Raster& baseline, double count) {
  if (!(count > 0.0) || !std::isfinite(count)) throw InvalidArgument("intensified: count must be positive");
  const double mass = integrate_raster(baseline);
  if (!(std::abs(mass - 1.0) <= 1e-9)) {
    throw InvalidArgument("intensified: baseline density must integrate to 1 (got " + std::to_string(mass) + ")");
  }
  return TreatmentIntervention(std::make_shared<const Raster>(baseline.scaled(count)));
}

Raster power_density(const PowerDensitySpec& spec, const GridPtr& grid) {
  if (spec.components.empty()) throw InvalidArgument("power_density: need at least one component");
  if (spec.components.size() != spec.exponents.size()) throw InvalidArgument("power_density: one exponent per component");
  for (const auto& d : spec.components) require_same_grid(*d.grid(), *grid, "power_density components");
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> logp(grid->size(), ninf);
  double top = ninf;
  for (std::size_t c = 0; c < grid->size(); ++c) {
    if (!grid->active(c)) continue;
    double acc = 0.0;
    for (std::size_t k = 0; k < spec.components.size(); ++k) {
      const double v = spec.components[k][c];
      const double a = spec.exponents[k];
      if (std::isnan(v) || v < 0.0) throw InvalidArgument("power_density: components must be nonnegative");
      if (a == 0.0) continue;
      if (v == 0.0) {
        if (a < 0.0) throw InvalidArgument("power_density: zero component with a negative exponent");
        acc = ninf;
        break;
      }
      acc += a * std::log(v);
    }
    logp[c] = acc;
    top = std::max(top, acc);
  }
  if (top == ninf) throw InvalidArgument("power_density: product of powers has zero mass");
  std::vector<double> vals(grid->size(), 0.0);
  for (std::size_t c = 0; c < grid->size(); ++c) {
    if (grid->active(c)) vals[c] = std::exp(logp[c] - top);
  }
  return normalize_raster(Raster(grid, std::move(vals)));
}

TreatmentIntervention location_shift(const Raster& baseline, const Raster& power, double count) {
  require_same_grid(*baseline.grid(), *power.grid(), "location_shift");
  const RasterGrid& g = *baseline.grid();
  bool constant = true;
  double ref = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t c = 0; c < g.size() && constant; ++c) {
    if (!g.active(c)) continue;
    if (std::isnan(ref)) ref = power[c];
    constant = power[c] == ref;
  }
  if (constant && ref > 0.0) {
    const double mass = integrate_raster(baseline);
    return intensified(std::abs(mass - 1.0) <= 1e-9 ? baseline : normalize_raster(baseline), count);
  }
  std::vector<double> prod(g.size(), 0.0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (g.active(c)) prod[c] = baseline[c] * power[c];
  }
  const Raster shifted = normalize_raster(Raster(baseline.grid(), std::move(prod)));
  if (!(count > 0.0) || !std::isfinite(count)) throw InvalidArgument("location_shift: count must be positive");
  return TreatmentIntervention(std::make_shared<const Raster>(shifted.scaled(count)));
}

double incremental_shift(double p, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("incremental_shift: delta must be positive");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("incremental_shift: p must lie in [0, 1]");
  if (delta == 1.0 || p == 0.0 || p == 1.0) return p;
  if (std::isinf(delta)) return 1.0;
  return delta * p / (delta * p + 1.0 - p);
}

double log_intervention_density(const TreatmentIntervention& iv, const PointPattern& pattern) {
  return log_pattern_density(iv.intensity(), iv.expected_count(), pattern);
}

PointPattern sample_pattern(const TreatmentIntervention& iv, int t, Rng& rng) {
  const double mean = iv.expected_count();
  if (!(mean > 0.0)) return PointPattern::unchecked(t, {});
  std::poisson_distribution<long> count_dist(mean);
  const long n = count_dist(rng);
  const auto& cum = iv.cumulative_mass();
  const double total = cum.back();
  const RasterGrid& g = *iv.intensity().grid();
  const SpatialWindow& w = g.window();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    const double u = unit(rng) * total;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    std::size_t c = static_cast<std::size_t>(it - cum.begin());
    if (it == cum.end()) {
      // u rounded onto the total: take the last cell carrying mass.
      c = cum.size() - 1;
      while (c > 0 && cum[c] == cum[c - 1]) --c;
    }
    const Box b = g.cell_box(c);
    for (;;) {
      Point p{b.xmin + unit(rng) * b.width(), b.ymin + unit(rng) * b.height()};
      if (g.uniform() || w.contains(p)) {
        pts.push_back(p);
        break;
      }
    }
  }
  return PointPattern::unchecked(t, std::move(pts));
}

std::vector<int> sample_marks(const std::vector<std::vector<double>>& probabilities, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> marks;
  marks.reserve(probabilities.size());
  for (const auto& probs : probabilities) {
    const double u = unit(rng);
    double run = 0.0;
    int pick = static_cast<int>(probs.size()) - 1;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      run += probs[k];
      if (u < run) {
        pick = static_cast<int>(k);
        break;
      }
    }
    marks.push_back(pick);
  }
  return marks;
}

}  // namespace geocausal
