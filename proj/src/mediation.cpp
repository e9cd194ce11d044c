#include "geocausal/mediation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"

namespace geocausal {

namespace {

double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace

MediatorScoreModel::MediatorScoreModel(std::vector<std::string> mark_labels, std::vector<std::string> covariates,
                                       std::vector<std::optional<NaturalCubicBasis>> feature_bases, MediatorTree tree,
                                       std::vector<MediatorStage> stages)
    : mark_labels_(std::move(mark_labels)),
      covariates_(std::move(covariates)),
      bases_(std::move(feature_bases)),
      tree_(std::move(tree)),
      stages_(std::move(stages)) {
  if (tree_.exits.empty()) throw InvalidArgument("mediator tree needs at least one stage");
  if (stages_.size() != tree_.exits.size()) throw InvalidArgument("mediator model: one fitted stage per tree stage");
  if (bases_.size() != covariates_.size()) throw InvalidArgument("mediator model: one feature basis slot per covariate");
  std::set<std::string> seen;
  for (const auto& e : tree_.exits) seen.insert(e);
  seen.insert(tree_.final_mark);
  if (seen.size() != tree_.exits.size() + 1) throw InvalidArgument("mediator tree: categories must be distinct");
  for (const auto& e : tree_.exits) {
    const int k = mark_index(e);
    if (k < 0) throw InvalidArgument("mediator tree: unknown mark '" + e + "'");
    exit_index_.push_back(k);
  }
  final_index_ = mark_index(tree_.final_mark);
  if (final_index_ < 0) throw InvalidArgument("mediator tree: unknown mark '" + tree_.final_mark + "'");
  for (const auto& s : stages_) {
    if (s.coefficients.size() != feature_count() + 1) throw InvalidArgument("mediator stage: coefficient count mismatch");
  }
}

int MediatorScoreModel::mark_index(const std::string& label) const {
  for (std::size_t k = 0; k < mark_labels_.size(); ++k) {
    if (mark_labels_[k] == label) return static_cast<int>(k);
  }
  return -1;
}

std::size_t MediatorScoreModel::feature_count() const {
  std::size_t n = 0;
  for (const auto& b : bases_) n += b ? static_cast<std::size_t>(b->dimension()) : 1;
  return n;
}

std::vector<double> MediatorScoreModel::covariates_at(const CovariateStack& stack, Point p) const {
  std::vector<double> v;
  v.reserve(covariates_.size());
  for (const auto& name : covariates_) v.push_back(stack.get(name).sample(p));
  return v;
}

std::vector<double> MediatorScoreModel::features(std::span<const double> x) const {
  std::vector<double> f;
  f.reserve(feature_count());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (bases_[k]) {
      const auto z = bases_[k]->evaluate(x[k]);
      f.insert(f.end(), z.begin(), z.end());
    } else {
      f.push_back(x[k]);
    }
  }
  return f;
}

std::vector<double> MediatorScoreModel::stage_probabilities(std::span<const double> x) const {
  const auto f = features(x);
  std::vector<double> p;
  for (const auto& s : stages_) {
    double eta = s.coefficients[0];
    for (std::size_t k = 0; k < f.size(); ++k) eta += s.coefficients[k + 1] * f[k];
    p.push_back(expit(eta));
  }
  return p;
}

std::vector<double> MediatorScoreModel::category_probabilities(std::span<const double> x,
                                                               const std::optional<MediatorIntervention>& shift) const {
  auto p = stage_probabilities(x);
  if (shift && shift->delta != 1.0) {
    shift->validate();
    bool placed = false;
    for (std::size_t k = 0; k < tree_.exits.size(); ++k) {
      if (tree_.exits[k] == shift->target_mark) {
        p[k] = 1.0 - incremental_shift(1.0 - p[k], shift->delta);
        placed = true;
      }
    }
    if (tree_.final_mark == shift->target_mark) {
      p.back() = incremental_shift(p.back(), shift->delta);
      placed = true;
    }
    if (!placed) throw InvalidArgument("mediator shift: target mark '" + shift->target_mark + "' is not in the tree");
  }
  std::vector<double> out(mark_labels_.size(), 0.0);
  double reach = 1.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    out[static_cast<std::size_t>(exit_index_[k])] = reach * (1.0 - p[k]);
    reach *= p[k];
  }
  out[static_cast<std::size_t>(final_index_)] = reach;
  return out;
}

MediatorScoreModel fit_mediator_score(const PatternSeries& series, const std::vector<std::string>& covariate_names,
                                      const MediatorTree& tree, const MediatorFitOptions& options) {
  const auto& labels = series.mark_labels();
  auto index_of = [&](const std::string& l) {
    const int k = series.mark_index(l);
    if (k < 0) throw InvalidArgument("mediator tree: mark '" + l + "' does not occur in the series labels");
    return k;
  };
  std::vector<int> exit_idx;
  for (const auto& e : tree.exits) exit_idx.push_back(index_of(e));
  const int final_idx = index_of(tree.final_mark);

  // Point-level covariates and marks.
  std::vector<std::vector<double>> xs;
  std::vector<int> marks;
  for (int t = 1; t <= series.T(); ++t) {
    const Period& per = series.at(t);
    for (std::size_t i = 0; i < per.treatment.size(); ++i) {
      const int m = per.treatment.marks()[i];
      if (m == kUnmarked) continue;
      std::vector<double> x;
      bool ok = true;
      for (const auto& name : covariate_names) {
        if (!per.covariates) throw InvalidArgument("fit_mediator_score: period without covariates");
        const double v = per.covariates->get(name).sample(per.treatment.points()[i]);
        ok = ok && std::isfinite(v);
        x.push_back(v);
      }
      if (!ok) continue;
      xs.push_back(std::move(x));
      marks.push_back(m);
    }
  }

  std::vector<std::optional<NaturalCubicBasis>> bases(covariate_names.size());
  if (options.spline_df > 1) {
    for (std::size_t k = 0; k < covariate_names.size(); ++k) {
      std::vector<double> v;
      for (const auto& x : xs) v.push_back(x[k]);
      bases[k] = NaturalCubicBasis::from_values(v, options.spline_df);
    }
  }
  std::vector<std::string> feature_names{"(intercept)"};
  for (std::size_t k = 0; k < covariate_names.size(); ++k) {
    if (bases[k]) {
      for (int d = 1; d <= bases[k]->dimension(); ++d) feature_names.push_back(covariate_names[k] + "_ns" + std::to_string(d));
    } else {
      feature_names.push_back(covariate_names[k]);
    }
  }
  // A throwaway model gives the feature map.
  std::vector<MediatorStage> placeholder(tree.exits.size());
  for (auto& s : placeholder) s.coefficients.assign(feature_names.size(), 0.0);
  const MediatorScoreModel mapper(labels, covariate_names, bases, tree, placeholder);

  std::vector<MediatorStage> stages;
  std::set<int> remaining(exit_idx.begin(), exit_idx.end());
  remaining.insert(final_idx);
  for (std::size_t k = 0; k < tree.exits.size(); ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < marks.size(); ++i) {
      if (remaining.count(marks[i])) rows.push_back(i);
    }
    if (rows.empty()) throw InvalidArgument("fit_mediator_score: stage " + std::to_string(k + 1) + " has no points");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_names.size()));
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto f = mapper.features(xs[rows[r]]);
      const auto ri = static_cast<Eigen::Index>(r);
      X(ri, 0) = 1.0;
      for (std::size_t c = 0; c < f.size(); ++c) X(ri, static_cast<Eigen::Index>(c + 1)) = f[c];
      y[ri] = marks[rows[r]] == exit_idx[k] ? 0.0 : 1.0;
    }
    const DenseDesign design(feature_names, X, y);
    GlmFit fit;
    try {
      fit = fit_glm(design, GlmFamily::binomial, options.glm);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("mediator stage " + std::to_string(k + 1) + " (exit '" + tree.exits[k] + "'): " + e.what());
    }
    MediatorStage s;
    s.exit_mark = tree.exits[k];
    s.coefficients.assign(fit.coefficients.data(), fit.coefficients.data() + fit.coefficients.size());
    s.deviance = fit.deviance;
    s.iterations = fit.iterations;
    s.converged = fit.converged;
    s.points = rows.size();
    stages.push_back(std::move(s));
    remaining.erase(exit_idx[k]);
  }
  return MediatorScoreModel(labels, covariate_names, std::move(bases), tree, std::move(stages));
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += avg;
    }
    i = j;
  }
  for (int l : labels) (l ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) throw InvalidArgument("auc: need at least one positive and one negative");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

std::vector<double> auc_diagnostic(const MediatorScoreModel& model, const PatternSeries& held_out) {
  const auto& tree = model.tree();
  std::vector<std::vector<double>> scores(tree.exits.size());
  std::vector<std::vector<int>> labels(tree.exits.size());
  for (int t = 1; t <= held_out.T(); ++t) {
    const Period& per = held_out.at(t);
    for (std::size_t i = 0; i < per.treatment.size(); ++i) {
      const int m = per.treatment.marks()[i];
      if (m == kUnmarked) continue;
      const auto x = model.covariates_at(*per.covariates, per.treatment.points()[i]);
      const auto p = model.stage_probabilities(x);
      const std::string& label = held_out.mark_labels()[static_cast<std::size_t>(m)];
      for (std::size_t k = 0; k < tree.exits.size(); ++k) {
        scores[k].push_back(p[k]);
        const bool exit = label == tree.exits[k];
        labels[k].push_back(exit ? 0 : 1);
        if (exit) break;
      }
    }
  }
  std::vector<double> out;
  for (std::size_t k = 0; k < scores.size(); ++k) out.push_back(auc(scores[k], labels[k]));
  return out;
}

double mediator_log_density(const MediatorScoreModel& model, const MarkedPointPattern& pattern,
                            const CovariateStack& covariates, const std::optional<MediatorIntervention>& shift) {
  std::vector<double> logs;
  logs.reserve(pattern.size());
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const Point s = pattern.points()[i];
    const int m = pattern.marks()[i];
    if (m == kUnmarked) {
      std::ostringstream msg;
      msg << "treatment event (" << s.x << ", " << s.y << ") at period " << pattern.base().time() << " has no mark";
      throw InvalidArgument(msg.str());
    }
    const auto probs = model.category_probabilities(model.covariates_at(covariates, s), shift);
    const double p = probs.at(static_cast<std::size_t>(m));
    if (!(p > 0.0) || !std::isfinite(p)) {
      std::ostringstream msg;
      msg << "overlap violation: mark " << model.mark_labels()[static_cast<std::size_t>(m)] << " at (" << s.x << ", "
          << s.y << "), period " << pattern.base().time() << " has zero mediator probability";
      throw OverlapViolation(msg.str(), pattern.base().time(), s.x, s.y);
    }
    logs.push_back(std::log(p));
  }
  return pairwise_sum(logs);
}

std::vector<std::vector<double>> mediation_log_ratios(const PatternSeries& series, std::span<const double> log_e,
                                                      const MediatorScoreModel& model, const InterventionPair& iv) {
  auto ratios = treatment_log_ratios(series, log_e, iv);
  if (!iv.mediator || iv.mediator->delta == 1.0) return ratios;  // pass-through: ratio exactly 1
  const std::size_t T = static_cast<std::size_t>(series.T());
  std::vector<double> med(T);
  parallel_for(T, [&](std::size_t k) {
    const Period& per = series.at(static_cast<int>(k) + 1);
    if (per.treatment.size() == 0) {
      med[k] = 0.0;
      return;
    }
    med[k] = mediator_log_density(model, per.treatment, *per.covariates, iv.mediator) -
             mediator_log_density(model, per.treatment, *per.covariates);
  });
  for (auto& row : ratios) {
    for (std::size_t k = 0; k < T; ++k) row[k] += med[k];
  }
  return ratios;
}

WeightSeries compute_mediation_weight_series(const PatternSeries& series, std::span<const double> log_e,
                                             const MediatorScoreModel& model, const InterventionPair& iv,
                                             const WeightOptions& options) {
  return weights_from_log_ratios(mediation_log_ratios(series, log_e, model, iv), iv.L, options);
}

double compute_mediation_weights(const PatternSeries& series, const FittedPropensity& propensity,
                                 const MediatorScoreModel& model, const InterventionPair& iv, int L, int t) {
  if (L != iv.L) throw InvalidArgument("compute_mediation_weights: L does not match the intervention");
  if (t < L || t > series.T()) throw InvalidArgument("compute_mediation_weights: need L <= t <= T");
  const auto lam = predict_series(propensity, series);
  double acc = 0.0;
  for (int k = 0; k < L; ++k) {
    const int tp = t - L + 1 + k;
    const Period& per = series.at(tp);
    const auto& w = per.treatment.base();
    acc += log_intervention_density(iv.at(k), w) - log_pattern_density(*lam[static_cast<std::size_t>(tp - 1)], w);
    if (iv.mediator && iv.mediator->delta != 1.0 && per.treatment.size() > 0) {
      acc += mediator_log_density(model, per.treatment, *per.covariates, iv.mediator) -
             mediator_log_density(model, per.treatment, *per.covariates);
    }
  }
  if (!std::isfinite(acc)) throw Error("compute_mediation_weights: non-finite log weight at period " + std::to_string(t));
  return std::exp(acc);
}

MediationEffects mediation_from_weights(const WeightSeries& a, const WeightSeries& middle, const WeightSeries& b,
                                        std::span<const double> outcomes, DecompositionOrder order) {
  MediationEffects m;
  m.order = order;
  m.total = contrast(a, b, outcomes);
  if (order == DecompositionOrder::treatment_first) {
    m.direct = contrast(a, middle, outcomes);
    m.indirect = contrast(middle, b, outcomes);
  } else {
    m.indirect = contrast(a, middle, outcomes);
    m.direct = contrast(middle, b, outcomes);
  }
  return m;
}

MediationEffects estimate_mediation_effects(const PatternSeries& series, const FittedPropensity& propensity,
                                            const MediatorScoreModel& model, const InterventionPair& iv_a,
                                            const InterventionPair& iv_b, const SmoothingSpec& spec,
                                            const Region& region, DecompositionOrder order,
                                            const WeightOptions& options) {
  if (iv_a.L != iv_b.L) throw InvalidArgument("estimate_mediation_effects: interventions must share L");
  InterventionPair mid;
  mid.L = iv_a.L;
  if (order == DecompositionOrder::treatment_first) {
    mid.treatment = iv_b.treatment;
    mid.mediator = iv_a.mediator;
  } else {
    mid.treatment = iv_a.treatment;
    mid.mediator = iv_b.mediator;
  }
  const auto log_e = propensity_log_densities(series, predict_series(propensity, series));
  const WeightSeries wa = compute_mediation_weight_series(series, log_e, model, iv_a, options);
  const WeightSeries wm = compute_mediation_weight_series(series, log_e, model, mid, options);
  const WeightSeries wb = compute_mediation_weight_series(series, log_e, model, iv_b, options);
  MediationEffects m = mediation_from_weights(wa, wm, wb, outcome_integrals(series, spec, region), order);
  const std::string la = iv_a.label.empty() ? "F'" : iv_a.label;
  const std::string lb = iv_b.label.empty() ? "F''" : iv_b.label;
  m.middle_label = order == DecompositionOrder::treatment_first ? "(W of " + lb + ", M of " + la + ")"
                                                                 : "(W of " + la + ", M of " + lb + ")";
  for (EffectEstimate* e : {&m.total, &m.direct, &m.indirect}) {
    e->region = region.label();
  }
  m.total.label_a = la;
  m.total.label_b = lb;
  m.direct.label_a = order == DecompositionOrder::treatment_first ? la : m.middle_label;
  m.direct.label_b = order == DecompositionOrder::treatment_first ? m.middle_label : lb;
  m.indirect.label_a = order == DecompositionOrder::treatment_first ? m.middle_label : la;
  m.indirect.label_b = order == DecompositionOrder::treatment_first ? lb : m.middle_label;
  return m;
}

nlohmann::json to_json(const MediatorScoreModel& model) {
  using nlohmann::json;
  json stages = json::array();
  for (const auto& s : model.stages()) {
    stages.push_back({{"exit_mark", s.exit_mark},
                      {"coefficients", s.coefficients},
                      {"deviance", s.deviance},
                      {"iterations", s.iterations},
                      {"converged", s.converged},
                      {"points", s.points}});
  }
  return json{{"covariates", model.covariates()},
              {"tree", {{"exits", model.tree().exits}, {"final", model.tree().final_mark}}},
              {"family", "logistic"},
              {"stages", stages}};
}

nlohmann::json to_json(const MediationEffects& m) {
  auto block = [](const EffectEstimate& e, const char* name) {
    auto j = to_json(e);
    j["estimand"] = name;
    return j;
  };
  return nlohmann::json{
      {"order", m.order == DecompositionOrder::treatment_first ? "treatment_first" : "mediator_first"},
      {"middle", m.middle_label},
      {"total", block(m.total, "total")},
      {"direct", block(m.direct, "direct")},
      {"indirect", block(m.indirect, "indirect")}};
}

MediationEffects mediation_effects_from_json(const nlohmann::json& j) {
  MediationEffects m;
  try {
    const auto order = j.at("order").get<std::string>();
    if (order == "treatment_first") {
      m.order = DecompositionOrder::treatment_first;
    } else if (order == "mediator_first") {
      m.order = DecompositionOrder::mediator_first;
    } else {
      throw InvalidArgument("mediation json: unknown order '" + order + "'");
    }
    m.middle_label = j.at("middle").get<std::string>();
    m.total = effect_from_json(j.at("total"));
    m.direct = effect_from_json(j.at("direct"));
    m.indirect = effect_from_json(j.at("indirect"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("mediation json: ") + e.what());
  }
  return m;
}

}  // namespace geocausal
