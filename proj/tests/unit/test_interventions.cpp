#include <doctest.h>

#include <cmath>

#include "geocausal/errors.hpp"
#include "geocausal/interventions.hpp"
#include "geocausal/propensity.hpp"
#include "helpers.hpp"

using namespace geocausal;

TEST_CASE("intensified scales a normalised baseline") {
  const auto g = gct::square_grid(6, 6);
  const auto base = normalize_raster(*gct::layer(g, [](Point p) { return 1 + p.x; }));
  for (double count : {1.0, 2.0, 4.0, 6.0}) {
    const auto iv = intensified(base, count);
    CHECK(iv.expected_count() == doctest::Approx(count).epsilon(1e-12));
    CHECK(integrate_raster(iv.intensity()) == doctest::Approx(count).epsilon(1e-12));
  }
  const auto one = intensified(base, 1.0);
  for (std::size_t c = 0; c < g->size(); ++c) CHECK(one.intensity()[c] == base[c]);
  CHECK_THROWS_AS(intensified(base.scaled(2.0), 1.0), InvalidArgument);
}

TEST_CASE("power density") {
  const auto g = gct::square_grid(5, 5);
  const auto d1 = *gct::layer(g, [](Point p) { return 0.5 + p.x; });
  const auto d2 = *gct::layer(g, [](Point p) { return std::exp(-p.y); });
  SUBCASE("zero exponents give the uniform density") {
    const auto u = power_density(PowerDensitySpec{{d1, d2}, {0.0, 0.0}}, g);
    for (std::size_t c = 0; c < g->size(); ++c) CHECK(u[c] == doctest::Approx(1.0 / 25.0).epsilon(1e-12));
  }
  SUBCASE("one component with exponent one is normalise(d1)") {
    const auto p = power_density(PowerDensitySpec{{d1}, {1.0}}, g), n = normalize_raster(d1);
    for (std::size_t c = 0; c < g->size(); ++c) CHECK(p[c] == doctest::Approx(n[c]).epsilon(1e-12));
  }
  SUBCASE("unit mass and rescaling invariance") {
    const auto p = power_density(PowerDensitySpec{{d1, d2}, {1.5, -0.7}}, g);
    CHECK(std::abs(integrate_raster(p) - 1.0) < 1e-12);
    const auto q = power_density(PowerDensitySpec{{d1.scaled(9.0), d2.scaled(0.01)}, {1.5, -0.7}}, g);
    for (std::size_t c = 0; c < g->size(); ++c) CHECK(q[c] == doctest::Approx(p[c]).epsilon(1e-12));
  }
  SUBCASE("zero mass is an error") {
    CHECK_THROWS(power_density(PowerDensitySpec{{Raster(g, 0.0)}, {1.0}}, g));
  }
}

TEST_CASE("location shift") {
  const auto g = gct::square_grid(4, 4);
  const auto base = normalize_raster(*gct::layer(g, [](Point p) { return 1 + p.x * p.y; }));
  const auto a = location_shift(base, Raster(g, 0.3), 5.0), b = intensified(base, 5.0);
  for (std::size_t c = 0; c < g->size(); ++c) CHECK(a.intensity()[c] == b.intensity()[c]);

  // two-cell toy: max-cell share grows with the exponent
  const auto g2 = build_grid(SpatialWindow(Box{0, 0, 2, 1}), 2, 1);
  const auto b2 = normalize_raster(Raster(g2, 1.0));
  const Raster bumps(g2, std::vector<double>{3.0, 1.0});
  double prev = 0.0;
  for (double alpha : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const auto iv = location_shift(b2, power_density(PowerDensitySpec{{bumps}, {alpha}}, g2), 5.0);
    const double share = iv.intensity()[0] / (iv.intensity()[0] + iv.intensity()[1]);
    CHECK(share > prev);
    prev = share;
  }
  CHECK_THROWS(location_shift(b2, Raster(g2, 0.0), 1.0));
}

TEST_CASE("incremental shift") {
  CHECK(incremental_shift(0.37, 1.0) == 0.37);
  CHECK(std::abs(incremental_shift(0.5, 2.0) - 2.0 / 3.0) < 1e-12);
  CHECK(incremental_shift(0.2, 1e12) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(incremental_shift(0.0, 5.0) == 0.0);
  CHECK(incremental_shift(1.0, 0.1) == 1.0);
  CHECK_THROWS_AS(incremental_shift(0.5, 0.0), InvalidArgument);
  CHECK_THROWS_AS(incremental_shift(0.5, -1.0), InvalidArgument);
  CHECK_THROWS_AS(incremental_shift(1.5, 2.0), InvalidArgument);
  Rng rng = make_rng(44);
  std::uniform_real_distribution<double> up(0.001, 0.999), ul(-4, 4);
  for (int k = 0; k < 1000; ++k) {
    const double p = up(rng), d = std::exp(ul(rng));
    CHECK(std::abs(incremental_shift(incremental_shift(p, d), 1.0 / d) - p) < 1e-12);
  }
}

TEST_CASE("log intervention density") {
  const auto g = gct::square_grid(4, 4);
  const auto iv = intensified(normalize_raster(*gct::layer(g, [](Point p) { return 1 + p.x; })), 3.0);
  CHECK(log_intervention_density(iv, PointPattern(1, {}, g->window())) == doctest::Approx(-3.0).epsilon(1e-12));
  Rng rng = make_rng(1);
  for (int k = 0; k < 20; ++k) {
    const auto p = sample_pattern(iv, 1, rng);
    CHECK(log_intervention_density(iv, p) == log_pattern_density(iv.intensity(), iv.expected_count(), p));
  }
  std::vector<double> z(g->size(), 1.0);
  z[0] = 0.0;
  const TreatmentIntervention hole(std::make_shared<const Raster>(g, z));
  CHECK_THROWS_AS(log_intervention_density(hole, PointPattern(1, {{0.5, 0.5}}, g->window())), OverlapViolation);
}

TEST_CASE("sampler moments") {
  const auto g = build_grid(SpatialWindow(Box{0, 0, 3, 1}), 3, 1);
  const TreatmentIntervention iv(std::make_shared<const Raster>(g, std::vector<double>{0.5, 1.0, 1.5}));
  Rng rng = make_rng(99);
  const int n = 100000;
  double total = 0;
  std::vector<double> cells(3, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto p = sample_pattern(iv, 1, rng);
    total += static_cast<double>(p.size());
    for (const auto& q : p.points()) cells[*g->cell_of(q)] += 1;
  }
  CHECK(std::abs(total / n - 3.0) < 3 * std::sqrt(3.0 / n));
  const double expect[] = {1.0 / 6, 2.0 / 6, 3.0 / 6};
  for (int c = 0; c < 3; ++c) {
    const double f = cells[c] / total;
    CHECK(std::abs(f - expect[c]) < 3 * std::sqrt(expect[c] * (1 - expect[c]) / total));
  }
  const TreatmentIntervention none(std::make_shared<const Raster>(g, 0.0));
  for (int k = 0; k < 100; ++k) CHECK(sample_pattern(none, 1, rng).empty());
}

TEST_CASE("mark sampler and pair validation") {
  Rng rng = make_rng(3);
  const std::vector<std::vector<double>> probs(30000, std::vector<double>{0.2, 0.8});
  const auto m = sample_marks(probs, rng);
  double ones = 0;
  for (int v : m) ones += v;
  CHECK(std::abs(ones / 30000 - 0.8) < 3 * std::sqrt(0.16 / 30000));
  const auto g = gct::square_grid(2, 2);
  const auto iv = intensified(normalize_raster(Raster(g, 1.0)), 1.0);
  CHECK_THROWS(make_pair_intervention(iv, 0));
  const auto pair = make_pair_intervention(iv, 3, MediatorIntervention{2.0, "military"}, "x");
  CHECK(pair.L == 3);
  CHECK(&pair.at(0) != nullptr);
  CHECK_THROWS((MediatorIntervention{0.0, "m"}).validate());
}
