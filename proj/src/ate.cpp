#include "geocausal/ate.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"
#include "geocausal/splines.hpp"

namespace geocausal {

double effective_sample_size(std::span<const double> weights) {
  std::vector<double> sq(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) sq[k] = weights[k] * weights[k];
  const double s = pairwise_sum(weights);
  const double s2 = pairwise_sum(sq);
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

WeightSeries weights_from_log_weights(std::vector<double> log_weights, int L, int T, const WeightOptions& options) {
  if (L < 1 || T < L) throw InvalidArgument("weights: need 1 <= L <= T");
  if (log_weights.size() != static_cast<std::size_t>(T - L + 1)) throw InvalidArgument("weights: expected T - L + 1 values");
  WeightSeries w;
  w.L = L;
  w.T = T;
  w.log_weights = std::move(log_weights);
  w.untruncated.resize(w.log_weights.size());
  for (std::size_t k = 0; k < w.log_weights.size(); ++k) {
    const double lw = w.log_weights[k];
    const double v = std::exp(lw);
    if (!std::isfinite(lw) || !std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite weight at period " << (static_cast<int>(k) + L) << " (log weight " << lw << ")";
      throw Error(msg.str());
    }
    w.untruncated[k] = v;
  }
  w.weights = w.untruncated;
  if (options.truncation_quantile) {
    const double q = *options.truncation_quantile;
    if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("weights: truncation quantile must lie in (0, 1]");
    std::vector<double> sorted = w.untruncated;
    std::sort(sorted.begin(), sorted.end());
    w.truncation_quantile = q;
    w.truncation_cap = sorted_quantile(sorted, q);
    for (double& v : w.weights) {
      if (v > w.truncation_cap) {
        v = w.truncation_cap;
        ++w.truncated_count;
      }
    }
  }
  w.ess = effective_sample_size(w.weights);
  return w;
}

WeightSeries weights_from_log_ratios(const std::vector<std::vector<double>>& ratios, int L, const WeightOptions& options) {
  if (ratios.empty()) throw InvalidArgument("weights: no log ratios");
  const int T = static_cast<int>(ratios.front().size());
  if (L < 1 || T < L) throw InvalidArgument("weights: need 1 <= L <= T");
  auto ratio = [&](int k, int tp) {
    const auto& row = ratios.size() == 1 ? ratios.front() : ratios[static_cast<std::size_t>(k)];
    return row[static_cast<std::size_t>(tp - 1)];
  };
  std::vector<double> logw(static_cast<std::size_t>(T - L + 1));
  for (int t = L; t <= T; ++t) {
    double acc = 0.0;
    for (int k = 0; k < L; ++k) acc += ratio(k, t - L + 1 + k);
    logw[static_cast<std::size_t>(t - L)] = acc;
  }
  return weights_from_log_weights(std::move(logw), L, T, options);
}

std::vector<double> propensity_log_densities(const PatternSeries& series,
                                             const std::vector<std::shared_ptr<const Raster>>& intensities) {
  if (intensities.size() != static_cast<std::size_t>(series.T())) {
    throw InvalidArgument("propensity_log_densities: one intensity per period");
  }
  std::vector<double> integrals(intensities.size());
  std::map<const Raster*, double> seen;
  for (std::size_t k = 0; k < intensities.size(); ++k) {
    auto it = seen.find(intensities[k].get());
    if (it == seen.end()) it = seen.emplace(intensities[k].get(), integrate_raster(*intensities[k])).first;
    integrals[k] = it->second;
  }
  std::vector<double> out(intensities.size());
  parallel_for(out.size(), [&](std::size_t k) {
    out[k] = log_pattern_density(*intensities[k], integrals[k], series.at(static_cast<int>(k) + 1).treatment.base());
  });
  return out;
}

std::vector<std::vector<double>> treatment_log_ratios(const PatternSeries& series, std::span<const double> log_e,
                                                      const InterventionPair& iv) {
  iv.validate();
  require_same_grid(*iv.at(0).intensity().grid(), *series.grid(), "intervention intensity");
  const std::size_t T = static_cast<std::size_t>(series.T());
  if (log_e.size() != T) throw InvalidArgument("treatment_log_ratios: one propensity log density per period");
  std::map<const Raster*, std::vector<double>> by_raster;
  std::vector<std::vector<double>> out;
  for (const auto& tr : iv.treatment) {
    auto it = by_raster.find(&tr.intensity());
    if (it == by_raster.end()) {
      std::vector<double> r(T);
      parallel_for(T, [&](std::size_t k) {
        r[k] = log_intervention_density(tr, series.at(static_cast<int>(k) + 1).treatment.base()) - log_e[k];
      });
      it = by_raster.emplace(&tr.intensity(), std::move(r)).first;
    }
    out.push_back(it->second);
  }
  return out;
}

WeightSeries compute_weight_series(const PatternSeries& series, std::span<const double> log_e, const InterventionPair& iv,
                                   const WeightOptions& options) {
  return weights_from_log_ratios(treatment_log_ratios(series, log_e, iv), iv.L, options);
}

double compute_weights(const PatternSeries& series, const FittedPropensity& propensity, const InterventionPair& iv, int L,
                       int t) {
  if (L != iv.L) throw InvalidArgument("compute_weights: L does not match the intervention");
  if (t < L || t > series.T()) throw InvalidArgument("compute_weights: need L <= t <= T");
  const auto lam = predict_series(propensity, series);
  double acc = 0.0;
  for (int k = 0; k < L; ++k) {
    const int tp = t - L + 1 + k;
    const auto& w = series.at(tp).treatment.base();
    acc += log_intervention_density(iv.at(k), w) - log_pattern_density(*lam[static_cast<std::size_t>(tp - 1)], w);
  }
  if (!std::isfinite(acc)) throw Error("compute_weights: non-finite log weight at period " + std::to_string(t));
  return std::exp(acc);
}

std::vector<double> outcome_integrals(const PatternSeries& series, const SmoothingSpec& spec, const Region& region) {
  require_same_grid(*region.grid(), *series.grid(), "outcome region");
  const KernelIntegrator integ(series.grid(), spec);
  std::vector<double> out(static_cast<std::size_t>(series.T()));
  parallel_for(out.size(), [&](std::size_t k) {
    out[k] = integ.pattern_mass(series.at(static_cast<int>(k) + 1).outcome, region);
  });
  return out;
}

namespace {

std::vector<double> weighted_terms(const WeightSeries& w, std::span<const double> outcomes) {
  if (outcomes.size() != static_cast<std::size_t>(w.T)) throw InvalidArgument("outcome integrals must cover t = 1..T");
  std::vector<double> terms(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) terms[k] = w.weights[k] * outcomes[k + static_cast<std::size_t>(w.L) - 1];
  return terms;
}

double mean_of(std::span<const double> v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

Interval wald(double center, double var, double n, double z) {
  const double half = z * std::sqrt(var / n);
  return {center - half, center + half};
}

}  // namespace

double expected_events(const WeightSeries& weights, std::span<const double> outcomes, EstimatorMode mode) {
  const auto terms = weighted_terms(weights, outcomes);
  const double num = pairwise_sum(terms);
  if (mode == EstimatorMode::ipw) return num / static_cast<double>(terms.size());
  const double den = pairwise_sum(weights.weights);
  if (!(den > 0.0)) throw Error("Hajek estimate undefined: weights sum to zero");
  return num / den;
}

double expected_events(const PatternSeries& series, const WeightSeries& weights, const SmoothingSpec& spec,
                       const Region& region, EstimatorMode mode) {
  return expected_events(weights, outcome_integrals(series, spec, region), mode);
}

double variance_bound(std::span<const double> per_t) {
  if (per_t.empty()) return 0.0;
  std::vector<double> sq(per_t.size());
  for (std::size_t k = 0; k < per_t.size(); ++k) sq[k] = per_t[k] * per_t[k];
  return mean_of(sq);
}

HajekVariance hajek_variance(std::span<const double> wa, std::span<const double> wb, std::span<const double> outcomes,
                             double n_a, double n_b, double sigma2_star) {
  const std::size_t n = wa.size();
  if (wb.size() != n || outcomes.size() != n) throw InvalidArgument("hajek_variance: length mismatch");
  if (n < 2) return {sigma2_star, true};
  // Centered moment matrix of A_t = (w' S, w'' S, w', w'').
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), 4);
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    a(r, 0) = wa[k] * outcomes[k];
    a(r, 1) = wb[k] * outcomes[k];
    a(r, 2) = wa[k];
    a(r, 3) = wb[k];
  }
  const Eigen::RowVectorXd mean = a.colwise().mean();
  const Eigen::MatrixXd centered = a.rowwise() - mean;
  const Eigen::MatrixXd v = centered.transpose() * centered / static_cast<double>(n);
  bool singular = !v.allFinite();
  if (!singular) {
    Eigen::VectorXd d = v.diagonal();
    singular = (d.array() <= 0.0).any();
    if (!singular) {
      const Eigen::VectorXd s = d.array().rsqrt();
      const Eigen::MatrixXd corr = s.asDiagonal() * v * s.asDiagonal();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr, Eigen::EigenvaluesOnly);
      singular = eig.eigenvalues().minCoeff() <= 1e-12 * eig.eigenvalues().maxCoeff();
    }
  }
  if (singular) return {sigma2_star, true};
  std::vector<double> sq(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ja = wa[k] * (outcomes[k] - n_a) - wb[k] * (outcomes[k] - n_b);
    sq[k] = ja * ja;
  }
  return {mean_of(sq), false};
}

EffectEstimate contrast(const WeightSeries& a, const WeightSeries& b, std::span<const double> outcomes) {
  if (a.L != b.L || a.T != b.T) throw InvalidArgument("contrast: weight series must share L and T");
  EffectEstimate e;
  e.L = a.L;
  const std::size_t n = a.size();
  const std::span<const double> sub = outcomes.subspan(static_cast<std::size_t>(a.L) - 1, n);
  e.n_ipw_a = expected_events(a, outcomes, EstimatorMode::ipw);
  e.n_ipw_b = expected_events(b, outcomes, EstimatorMode::ipw);
  e.n_hajek_a = expected_events(a, outcomes, EstimatorMode::hajek);
  e.n_hajek_b = expected_events(b, outcomes, EstimatorMode::hajek);
  e.ipw = e.n_ipw_a - e.n_ipw_b;
  e.hajek = e.n_hajek_a - e.n_hajek_b;
  e.per_t.resize(n);
  for (std::size_t k = 0; k < n; ++k) e.per_t[k] = (a.weights[k] - b.weights[k]) * sub[k];
  e.sigma2_star = variance_bound(e.per_t);
  const HajekVariance hv = hajek_variance(a.weights, b.weights, sub, e.n_hajek_a, e.n_hajek_b, e.sigma2_star);
  e.hajek_var = hv.value;
  e.hajek_fallback = hv.fallback;
  if (hv.fallback) e.warnings.push_back("Hajek moment matrix singular; using the variance bound sigma*");
  const double nn = static_cast<double>(n);
  e.ci90_ipw = wald(e.ipw, e.sigma2_star, nn, kZ90);
  e.ci95_ipw = wald(e.ipw, e.sigma2_star, nn, kZ95);
  e.ci90_hajek = wald(e.hajek, e.hajek_var, nn, kZ90);
  e.ci95_hajek = wald(e.hajek, e.hajek_var, nn, kZ95);
  e.ess_a = a.ess;
  e.ess_b = b.ess;
  if (a.truncation_quantile || b.truncation_quantile) {
    WeightSeries ra = a, rb = b;
    ra.weights = a.untruncated;
    rb.weights = b.untruncated;
    e.ipw_untruncated = expected_events(ra, outcomes, EstimatorMode::ipw) - expected_events(rb, outcomes, EstimatorMode::ipw);
    e.hajek_untruncated =
        expected_events(ra, outcomes, EstimatorMode::hajek) - expected_events(rb, outcomes, EstimatorMode::hajek);
  }
  return e;
}

EffectEstimate estimate_ate(const PatternSeries& series, const FittedPropensity& propensity, const InterventionPair& iv_a,
                            const InterventionPair& iv_b, const SmoothingSpec& spec, const Region& region,
                            const WeightOptions& options) {
  if (iv_a.L != iv_b.L) throw InvalidArgument("estimate_ate: interventions must share L");
  const auto log_e = propensity_log_densities(series, predict_series(propensity, series));
  const WeightSeries wa = compute_weight_series(series, log_e, iv_a, options);
  const WeightSeries wb = compute_weight_series(series, log_e, iv_b, options);
  EffectEstimate e = contrast(wa, wb, outcome_integrals(series, spec, region));
  e.region = region.label();
  e.label_a = iv_a.label;
  e.label_b = iv_b.label;
  return e;
}

Raster weighted_mean_surface(const PatternSeries& series, const WeightSeries& weights, const SmoothingSpec& spec,
                             EstimatorMode mode) {
  const GridPtr& grid = series.grid();
  const KernelIntegrator integ(grid, spec);
  const std::size_t n = weights.size();
  double scale = 1.0 / static_cast<double>(n);
  if (mode == EstimatorMode::hajek) {
    const double den = pairwise_sum(weights.weights);
    if (!(den > 0.0)) throw Error("Hajek surface undefined: weights sum to zero");
    scale = 1.0 / den;
  }
  // Per-period cell masses, then a fixed-order reduction over periods.
  std::vector<std::vector<double>> parts(n);
  parallel_for(n, [&](std::size_t k) {
    std::vector<double> mass(grid->size(), 0.0);
    const int t = static_cast<int>(k) + weights.L;
    for (const Point& s : series.at(t).outcome.points()) integ.accumulate_cells(s, weights.weights[k] * scale, mass);
    parts[k] = std::move(mass);
  });
  std::vector<double> out(grid->size(), 0.0);
  std::vector<double> column(n);
  for (std::size_t c = 0; c < grid->size(); ++c) {
    if (!grid->active(c)) {
      out[c] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    for (std::size_t k = 0; k < n; ++k) column[k] = parts[k][c];
    out[c] = pairwise_sum(column) / grid->cell_area(c);
  }
  return Raster(grid, std::move(out));
}

std::vector<BandShare> effect_by_distance_band(const Raster& surface, const DistanceMap& distances,
                                               std::span<const double> bands) {
  require_same_grid(*surface.grid(), *distances.distances.grid(), "effect_by_distance_band");
  const double total = integrate_raster(surface);
  if (total == 0.0 || !std::isfinite(total)) throw Error("effect_by_distance_band: total effect is zero");
  const RasterGrid& g = *surface.grid();
  std::vector<BandShare> out;
  for (double d : bands) {
    if (!(d > 0.0)) throw InvalidArgument("effect_by_distance_band: band distances must be positive");
    std::vector<double> terms;
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (!g.active(c) || std::isnan(surface[c])) continue;
      if (distances.distances[c] < d) terms.push_back(surface[c] * g.cell_area(c));
    }
    out.push_back({d, pairwise_sum(terms) / total});
  }
  return out;
}

namespace {

nlohmann::json interval_json(const Interval& i) { return nlohmann::json::array({i.lo, i.hi}); }
Interval interval_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

nlohmann::json to_json(const EffectEstimate& e) {
  using nlohmann::json;
  json j{{"estimand", "ate"},
         {"L", e.L},
         {"region", e.region},
         {"intervention_a", e.label_a},
         {"intervention_b", e.label_b},
         {"ipw", e.ipw},
         {"hajek", e.hajek},
         {"expected_events",
          {{"ipw", {e.n_ipw_a, e.n_ipw_b}}, {"hajek", {e.n_hajek_a, e.n_hajek_b}}}},
         {"sigma2_star", e.sigma2_star},
         {"hajek_var", e.hajek_var},
         {"hajek_var_fallback", e.hajek_fallback},
         {"ci90", {{"ipw", interval_json(e.ci90_ipw)}, {"hajek", interval_json(e.ci90_hajek)}}},
         {"ci95", {{"ipw", interval_json(e.ci95_ipw)}, {"hajek", interval_json(e.ci95_hajek)}}},
         {"ess", {e.ess_a, e.ess_b}},
         {"per_t", e.per_t},
         {"warnings", e.warnings}};
  if (e.ipw_untruncated) j["ipw_untruncated"] = *e.ipw_untruncated;
  if (e.hajek_untruncated) j["hajek_untruncated"] = *e.hajek_untruncated;
  return j;
}

EffectEstimate effect_from_json(const nlohmann::json& j) {
  EffectEstimate e;
  e.L = j.at("L").get<int>();
  e.region = j.at("region").get<std::string>();
  e.label_a = j.at("intervention_a").get<std::string>();
  e.label_b = j.at("intervention_b").get<std::string>();
  e.ipw = j.at("ipw").get<double>();
  e.hajek = j.at("hajek").get<double>();
  const auto& ee = j.at("expected_events");
  e.n_ipw_a = ee.at("ipw").at(0).get<double>();
  e.n_ipw_b = ee.at("ipw").at(1).get<double>();
  e.n_hajek_a = ee.at("hajek").at(0).get<double>();
  e.n_hajek_b = ee.at("hajek").at(1).get<double>();
  e.sigma2_star = j.at("sigma2_star").get<double>();
  e.hajek_var = j.at("hajek_var").get<double>();
  e.hajek_fallback = j.at("hajek_var_fallback").get<bool>();
  e.ci90_ipw = interval_from(j.at("ci90").at("ipw"));
  e.ci90_hajek = interval_from(j.at("ci90").at("hajek"));
  e.ci95_ipw = interval_from(j.at("ci95").at("ipw"));
  e.ci95_hajek = interval_from(j.at("ci95").at("hajek"));
  e.ess_a = j.at("ess").at(0).get<double>();
  e.ess_b = j.at("ess").at(1).get<double>();
  e.per_t = j.at("per_t").get<std::vector<double>>();
  e.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (j.contains("ipw_untruncated")) e.ipw_untruncated = j.at("ipw_untruncated").get<double>();
  if (j.contains("hajek_untruncated")) e.hajek_untruncated = j.at("hajek_untruncated").get<double>();
  return e;
}

}  // namespace geocausal
