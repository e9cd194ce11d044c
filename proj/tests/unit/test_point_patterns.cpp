#include <doctest.h>

#include <cmath>
#include <fstream>

#include "geocausal/errors.hpp"
#include "geocausal/point_patterns.hpp"
#include "helpers.hpp"

using namespace geocausal;

TEST_CASE("count_in_region") {
  const auto g = gct::square_grid(10, 10);
  const PointPattern empty(1, {}, g->window());
  CHECK(count_in_region(empty, Region::whole(g)) == 0);
  const PointPattern p(1, {{1, 1}, {2, 3}, {8, 8}}, g->window());
  CHECK(count_in_region(p, Region::whole(g)) == 3);
  CHECK(count_in_region(p, Region::from_box(g, Box{0, 0, 5, 5})) == 2);
  CHECK(count_in_region(PointPattern(1, {{1, 1}, {2, 3}}, g->window()), Region::from_box(g, Box{0, 0, 5, 5})) == 2);
}

TEST_CASE("points outside the window are rejected") {
  const auto g = gct::square_grid(10, 10);
  CHECK_THROWS_AS(PointPattern(1, {{11, 1}}, g->window()), InvalidArgument);
}

TEST_CASE("kernel_smooth: empty is zero, interior point has unit mass") {
  const auto g = gct::square_grid(20, 256);
  const SmoothingSpec spec{1.0, Kernel::gaussian};
  const auto zero = kernel_smooth(PointPattern(1, {}, g->window()), spec, g);
  for (std::size_t c = 0; c < g->size(); ++c) CHECK(zero[c] == 0.0);
  const auto one = kernel_smooth(PointPattern(1, {{10.03, 9.91}}, g->window()), spec, g);
  CHECK(std::abs(integrate_raster(one) - 1.0) < 1e-3);
  const SmoothingSpec epa{1.5, Kernel::epanechnikov};
  CHECK(std::abs(integrate_raster(kernel_smooth(PointPattern(1, {{10.03, 9.91}}, g->window()), epa, g)) - 1.0) < 1e-3);
}

TEST_CASE("kernel_smooth is linear in the pattern") {
  const auto g = gct::square_grid(12, 48);
  const SmoothingSpec spec{0.8, Kernel::gaussian};
  const auto one = kernel_smooth(PointPattern(1, {{3.3, 4.4}}, g->window()), spec, g);
  const auto two = kernel_smooth(PointPattern(1, {{3.3, 4.4}, {3.3, 4.4}}, g->window()), spec, g);
  for (std::size_t c = 0; c < g->size(); ++c) CHECK(two[c] == 2.0 * one[c]);

  Rng rng = make_rng(11);
  const auto p1 = gct::uniform_points(g, 7, rng), p2 = gct::uniform_points(g, 5, rng);
  std::vector<Point> all(p1);
  all.insert(all.end(), p2.begin(), p2.end());
  const auto s1 = kernel_smooth(PointPattern(1, p1, g->window()), spec, g);
  const auto s2 = kernel_smooth(PointPattern(1, p2, g->window()), spec, g);
  const auto s12 = kernel_smooth(PointPattern(1, all, g->window()), spec, g);
  for (std::size_t c = 0; c < g->size(); ++c) CHECK(std::abs(s12[c] - (s1[c] + s2[c])) <= 1e-15 * (1 + s12[c]));
}

TEST_CASE("far-interior points keep their mass within [1-1e-3, 1]") {
  const auto g = gct::square_grid(30, 150);
  const SmoothingSpec spec{1.0, Kernel::gaussian};
  const KernelIntegrator ki(g, spec);
  Rng rng = make_rng(5);
  std::uniform_real_distribution<double> u(10.5, 19.5);
  for (int k = 0; k < 50; ++k) {
    const double m = ki.mass({u(rng), u(rng)}, Region::whole(g));
    CHECK(m >= 1 - 1e-3);
    CHECK(m <= 1 + 1e-12);
  }
}

TEST_CASE("kernel integrator agrees with the smoothed raster") {
  const auto g = gct::square_grid(10, 40);
  const SmoothingSpec spec{1.2, Kernel::gaussian};
  const KernelIntegrator ki(g, spec);
  const Region b = Region::from_box(g, Box{2, 3, 7, 8});
  const Polygon tri{{0, 0}, {10, 0}, {0, 10}};
  const Region tr = Region::from_polygon(g, tri);
  for (Point s : {Point{4.1, 5.2}, Point{0.3, 9.6}, Point{9.9, 0.1}}) {
    const auto r = kernel_smooth(PointPattern(1, {s}, g->window()), spec, g);
    CHECK(ki.mass(s, b) == doctest::Approx(integrate_raster(r, b)).epsilon(1e-12));
    CHECK(ki.mass(s, tr) == doctest::Approx(integrate_raster(r, tr)).epsilon(1e-12));
  }
}

TEST_CASE("kernel value normalisation") {
  const SmoothingSpec g{2.0, Kernel::gaussian};
  CHECK(kernel_value(g, 0.0) == doctest::Approx(1.0 / (2 * M_PI * 4.0)));
  const SmoothingSpec e{2.0, Kernel::epanechnikov};
  CHECK(kernel_value(e, 2.5) == 0.0);
  CHECK(kernel_value(e, 0.0) == doctest::Approx(2.0 / (M_PI * 4.0)));
  CHECK_THROWS_AS(validate(SmoothingSpec{0.0, Kernel::gaussian}), InvalidArgument);
  CHECK(parse_kernel("epanechnikov") == Kernel::epanechnikov);
  CHECK_THROWS(parse_kernel("box"));
}

namespace {

PatternSeries history_series(const GridPtr& g, const std::vector<std::vector<Point>>& w) {
  std::vector<Period> periods;
  auto stack = std::make_shared<CovariateStack>();
  for (std::size_t t = 0; t < w.size(); ++t) {
    Period p;
    p.treatment = MarkedPointPattern(PointPattern(static_cast<int>(t + 1), w[t], g->window()));
    p.outcome = PointPattern(static_cast<int>(t + 1), {}, g->window());
    p.covariates = stack;
    periods.push_back(std::move(p));
  }
  return PatternSeries(g, {}, std::move(periods));
}

}  // namespace

TEST_CASE("history maps") {
  const auto g = gct::square_grid(10, 10);
  const auto s = history_series(g, {{}, {{2.5, 2.5}}, {{7.5, 1.5}}, {}, {}});
  const std::vector<int> lags{1, 2, 4};
  SUBCASE("no prior events gives zeros") {
    const auto h = history_maps(s, 1, lags);
    for (const auto& m : h.maps) {
      for (std::size_t c = 0; c < g->size(); ++c) CHECK(m[c] == 0.0);
    }
    CHECK(h.truncated);
  }
  SUBCASE("event at a cell centre gives 1 there") {
    const auto h = history_maps(s, 3, lags);
    REQUIRE(h.names.size() == 6);
    CHECK(h.names[0] == history_name("treatment", 1));
    CHECK(h.maps[0][*g->cell_of({2.5, 2.5})] == 1.0);
  }
  SUBCASE("longer lag dominates pointwise and stays in [0,1]") {
    const auto h = history_maps(s, 4, lags);
    // brute force: min distance over events in [t-l, t-1]
    auto brute = [&](int t, int l, std::size_t c) {
      double d = INFINITY;
      for (int u = std::max(1, t - l); u <= t - 1; ++u) {
        for (const auto& p : s.at(u).treatment.points()) d = std::min(d, std::hypot(p.x - g->center(c).x, p.y - g->center(c).y));
      }
      return std::isinf(d) ? 0.0 : std::exp(-6.0 * d);
    };
    for (std::size_t c = 0; c < g->size(); ++c) {
      CHECK(h.maps[1][c] >= h.maps[0][c]);
      CHECK(h.maps[2][c] >= h.maps[1][c]);
      CHECK(h.maps[2][c] <= 1.0);
      CHECK(h.maps[0][c] == doctest::Approx(brute(4, 1, c)).epsilon(1e-14));
      CHECK(h.maps[2][c] == doctest::Approx(brute(4, 4, c)).epsilon(1e-14));
    }
  }
  SUBCASE("adding an event never decreases a value") {
    const auto s2 = history_series(g, {{}, {{2.5, 2.5}, {9, 9}}, {{7.5, 1.5}}, {}, {}});
    const auto a = history_maps(s, 4, lags), b = history_maps(s2, 4, lags);
    for (std::size_t k = 0; k < a.maps.size(); ++k) {
      for (std::size_t c = 0; c < g->size(); ++c) CHECK(b.maps[k][c] >= a.maps[k][c]);
    }
  }
}

TEST_CASE("marked patterns") {
  const auto g = gct::square_grid(4, 4);
  const PointPattern base(1, {{1, 1}, {2, 2}, {3, 3}}, g->window());
  const MarkedPointPattern m(base, {0, 1, 1});
  CHECK(m.fully_marked());
  CHECK(m.active(1) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS(MarkedPointPattern(base, {0, 1}));
  CHECK_FALSE(MarkedPointPattern(base).fully_marked());
}

TEST_CASE("duplicates are kept as distinct points") {
  const auto g = gct::square_grid(4, 4);
  const PointPattern p(1, {{1, 1}, {1, 1}, {2, 2}}, g->window());
  CHECK(p.size() == 3);
  CHECK(p.duplicate_count() == 1);
}

TEST_CASE("events csv round trip and errors") {
  const auto g = gct::square_grid(10, 5);
  const auto dir = std::filesystem::temp_directory_path() / "gc_unit_events";
  std::filesystem::create_directories(dir);
  {
    std::ofstream o(dir / "e.csv");
    o << "t,x,y,stream,mark\n1,1.5,2.5,treatment,military\n1,3,3,outcome,\n3,9.9,0.1,treatment,civilian\n2,5,5,outcome,\n";
  }
  const auto ev = read_events_csv(dir / "e.csv");
  REQUIRE(ev.size() == 4);
  auto stack = std::make_shared<CovariateStack>();
  const auto s = build_series(g, ev, 3, stack, {"civilian", "military"});
  CHECK(s.T() == 3);
  CHECK(s.at(1).treatment.size() == 1);
  CHECK(s.at(1).treatment.marks()[0] == s.mark_index("military"));
  CHECK(s.at(2).outcome.size() == 1);
  CHECK(s.at(3).treatment.marks()[0] == s.mark_index("civilian"));
  write_events_csv(dir / "back.csv", s);
  const auto s2 = build_series(g, read_events_csv(dir / "back.csv"), 3, stack, {"civilian", "military"});
  for (int t = 1; t <= 3; ++t) {
    CHECK(s2.at(t).treatment.points() == s.at(t).treatment.points());
    CHECK(s2.at(t).outcome.points() == s.at(t).outcome.points());
    CHECK(s2.at(t).treatment.marks() == s.at(t).treatment.marks());
  }
  {
    std::ofstream o(dir / "bad.csv");
    o << "t,x,y,stream\n1,abc,2,treatment\n";
  }
  CHECK_THROWS_AS(read_events_csv(dir / "bad.csv"), IoError);
  CHECK_THROWS_AS(read_events_csv(dir / "missing.csv"), IoError);
  {
    std::ofstream o(dir / "outside.csv");
    o << "t,x,y,stream\n1,20,2,treatment\n";
  }
  CHECK_THROWS(build_series(g, read_events_csv(dir / "outside.csv"), 1, stack));
}

TEST_CASE("scott bandwidth and prefix") {
  const auto g = gct::square_grid(10, 10);
  const auto s = gct::poisson_series(g, 40, 0.02, 0.05, 9);
  const double b = scott_bandwidth(s);
  CHECK(b > 0.0);
  CHECK(b < 10.0);
  const auto p = s.prefix(10);
  CHECK(p.T() == 10);
  CHECK(p.at(10).outcome.points() == s.at(10).outcome.points());
  CHECK(boundary_fraction(s, 0.0) == 0.0);
  CHECK(boundary_fraction(s, 5.0) == doctest::Approx(1.0));
}
