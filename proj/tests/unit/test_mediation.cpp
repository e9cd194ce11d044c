#include <doctest.h>

#include <cmath>

#include "geocausal/errors.hpp"
#include "geocausal/mediation.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/propensity.hpp"
#include "geocausal/simulate.hpp"
#include "helpers.hpp"

using namespace geocausal;

namespace {

SyntheticDGP mediated_dgp() {
  SyntheticDGP d = default_dgp();
  MediatorTruth m;
  m.labels = {"civilian", "military"};
  m.tree = MediatorTree{{"civilian"}, "military"};
  m.covariates = {"elevation", "urban"};
  m.stages = {{-0.5, 0.5, 1.0}};
  d.mediator = m;
  d.mediator_bonus = 0.6;
  d.bonus_mark = "military";
  return d;
}

MediatorStage stage(std::string exit, std::vector<double> coef) {
  MediatorStage s;
  s.exit_mark = std::move(exit);
  s.coefficients = std::move(coef);
  s.converged = true;
  return s;
}

double logistic(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace

TEST_CASE("auc") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  CHECK(auc(s, std::vector<int>{0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(auc(s, std::vector<int>{0, 1, 0, 1}) == doctest::Approx(1.0));
  CHECK(auc(s, std::vector<int>{1, 0, 1, 0}) == doctest::Approx(0.0));
  CHECK(auc(std::vector<double>(6, 0.5), std::vector<int>{0, 1, 0, 1, 1, 0}) == doctest::Approx(0.5));

  Rng rng = make_rng(8);
  std::uniform_int_distribution<int> lvl(0, 4), bit(0, 1);
  std::vector<double> sc(200);
  std::vector<int> lab(200);
  for (std::size_t i = 0; i < 200; ++i) {
    sc[i] = lvl(rng);  // plenty of ties
    lab[i] = bit(rng);
  }
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    for (std::size_t j = 0; j < 200; ++j) {
      if (lab[i] == 1 && lab[j] == 0) {
        pairs += 1;
        wins += sc[i] > sc[j] ? 1.0 : (sc[i] == sc[j] ? 0.5 : 0.0);
      }
    }
  }
  CHECK(auc(sc, lab) == doctest::Approx(wins / pairs).epsilon(1e-12));
}

TEST_CASE("category probabilities through a two-stage tree") {
  const MediatorScoreModel m({"none", "civilian", "military"}, {"x"}, {std::nullopt},
                             MediatorTree{{"none", "civilian"}, "military"},
                             {stage("none", {0.5, 1.0}), stage("civilian", {-0.3, 2.0})});
  const std::vector<double> x{0.4};
  const double p1 = logistic(0.5 + 0.4), p2 = logistic(-0.3 + 0.8);
  const auto pr = m.category_probabilities(x);
  REQUIRE(pr.size() == 3);
  CHECK(pr[0] == doctest::Approx(1 - p1).epsilon(1e-14));
  CHECK(pr[1] == doctest::Approx(p1 * (1 - p2)).epsilon(1e-14));
  CHECK(pr[2] == doctest::Approx(p1 * p2).epsilon(1e-14));
  CHECK(std::abs(pr[0] + pr[1] + pr[2] - 1.0) < 1e-15);

  // delta = 1 is the identity, otherwise the odds within the target's stage scale by delta
  CHECK(m.category_probabilities(x, MediatorIntervention{1.0, "military"}) == pr);
  const auto sh = m.category_probabilities(x, MediatorIntervention{3.0, "military"});
  CHECK(sh[0] == pr[0]);
  const double q2 = sh[2] / (sh[1] + sh[2]);
  CHECK(q2 / (1 - q2) == doctest::Approx(3.0 * p2 / (1 - p2)).epsilon(1e-12));
  const auto sc = m.category_probabilities(x, MediatorIntervention{0.5, "none"});
  CHECK(sc[0] / (1 - sc[0]) == doctest::Approx(0.5 * (1 - p1) / p1).epsilon(1e-12));
  CHECK(sc[2] / sc[1] == doctest::Approx(pr[2] / pr[1]).epsilon(1e-12));
  CHECK_THROWS_AS(m.category_probabilities(x, MediatorIntervention{2.0, "navy"}), InvalidArgument);
}

TEST_CASE("logistic stages recover the true mediator score") {
  const DgpModel model(mediated_dgp());
  const auto s = simulate_series(model, 4000, 21);
  const auto fit = fit_mediator_score(s, {"elevation", "urban"}, MediatorTree{{"civilian"}, "military"});
  REQUIRE(fit.stages().size() == 1);
  const auto& c = fit.stages()[0].coefficients;
  REQUIRE(c.size() == 3);
  CHECK(fit.stages()[0].converged);
  CHECK(std::abs(c[0] + 0.5) < 0.3);
  CHECK(std::abs(c[1] - 0.5) < 0.3);
  CHECK(std::abs(c[2] - 1.0) < 0.4);
  const auto held = simulate_series(model, 1000, 22);
  const auto a = auc_diagnostic(fit, held);
  REQUIRE(a.size() == 1);
  CHECK(a[0] > 0.55);
  CHECK(a[0] < 0.9);

  // a mark absent from the series is rejected
  CHECK_THROWS_AS(fit_mediator_score(s, {"elevation"}, MediatorTree{{"navy"}, "military"}), InvalidArgument);
}

TEST_CASE("mediator log density") {
  const DgpModel model(mediated_dgp());
  const auto s = simulate_series(model, 60, 3);
  const auto& mm = model.mediator_model();
  for (int t = 1; t <= 60; ++t) {
    const auto& w = s.at(t).treatment;
    double direct = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto pr = mm.category_probabilities(mm.covariates_at(*s.at(t).covariates, w.points()[i]));
      direct += std::log(pr[static_cast<std::size_t>(w.marks()[i])]);
    }
    CHECK(mediator_log_density(mm, w, *s.at(t).covariates) == doctest::Approx(direct).epsilon(1e-12));
  }
  const auto g = model.grid();
  const MarkedPointPattern unmarked(PointPattern(1, {{3, 3}}, g->window()));
  CHECK_THROWS(mediator_log_density(mm, unmarked, *s.at(1).covariates));
}

TEST_CASE("mediation weights and decomposition") {
  const DgpModel model(mediated_dgp());
  const auto s = simulate_series(model, 400, 9);
  const auto prop = fit_poisson_intensity(s, model.covariate_names());
  const auto log_e = propensity_log_densities(s, predict_series(prop, s));
  const auto& mm = model.mediator_model();
  const auto hi = build_intervention(model, InterventionRecipe{2.0, "propensity", MediatorIntervention{3.0, "military"}, "hi"}, 2);
  const auto lo = build_intervention(model, InterventionRecipe{1.0, "propensity", std::nullopt, "lo"}, 2);

  SUBCASE("no mediator shift reduces to treatment weights") {
    const auto plain = build_intervention(model, InterventionRecipe{2.0, "propensity", std::nullopt, "p"}, 2);
    const auto unit = build_intervention(model, InterventionRecipe{2.0, "propensity", MediatorIntervention{1.0, "military"}, "u"}, 2);
    const auto a = compute_weight_series(s, log_e, plain), b = compute_mediation_weight_series(s, log_e, mm, unit);
    CHECK(a.weights == b.weights);
  }
  SUBCASE("total splits into direct plus indirect") {
    const SmoothingSpec spec{2.0, Kernel::gaussian};
    const Region r = Region::from_box(model.grid(), Box{8, 8, 24, 24});
    for (auto order : {DecompositionOrder::treatment_first, DecompositionOrder::mediator_first}) {
      const auto m = estimate_mediation_effects(s, prop, mm, hi, lo, spec, r, order);
      const double scale = std::abs(m.direct.ipw) + std::abs(m.indirect.ipw);
      CHECK(std::abs(m.total.ipw - (m.direct.ipw + m.indirect.ipw)) <= 1e-12 * scale);
      CHECK(std::abs(m.total.hajek - (m.direct.hajek + m.indirect.hajek)) <= 1e-12 * (scale + 1));
      const auto back = mediation_effects_from_json(nlohmann::json::parse(to_json(m).dump()));
      CHECK(back.total == m.total);
      CHECK(back.indirect == m.indirect);
      CHECK(back.order == order);
    }
    // same treatment, mediator shift only: the direct part vanishes
    const auto shift_only = build_intervention(model, InterventionRecipe{1.0, "propensity", MediatorIntervention{3.0, "military"}, "m"}, 2);
    const auto m = estimate_mediation_effects(s, prop, mm, shift_only, lo, spec, r);
    CHECK(m.direct.ipw == 0.0);
    CHECK(m.indirect.ipw == m.total.ipw);
  }
  SUBCASE("precomputed pieces") {
    const auto wa = compute_mediation_weight_series(s, log_e, mm, hi);
    const auto wb = compute_mediation_weight_series(s, log_e, mm, lo);
    const std::vector<double> y(400, 2.0);
    const auto m = mediation_from_weights(wa, wa, wb, y, DecompositionOrder::treatment_first);
    CHECK(m.direct.ipw == 0.0);
    CHECK(m.indirect.ipw == m.total.ipw);
  }
}
