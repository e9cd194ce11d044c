#pragma once

#include <memory>
#include <vector>

#include "geocausal/geo_core.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/rng.hpp"

namespace gct {

using namespace geocausal;

inline GridPtr square_grid(double side, int n) { return build_grid(SpatialWindow(Box{0, 0, side, side}), n, n); }

inline std::shared_ptr<const Raster> layer(const GridPtr& g, auto f) {
  std::vector<double> v(g->size());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = f(g->center(c));
  return std::make_shared<const Raster>(g, std::move(v));
}

// Uniform random points in the window.
inline std::vector<Point> uniform_points(const GridPtr& g, std::size_t n, Rng& rng) {
  const Box& b = g->window().bounds();
  std::uniform_real_distribution<double> ux(b.xmin, b.xmax), uy(b.ymin, b.ymax);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {ux(rng), uy(rng)};
  return pts;
}

// Series with homogeneous Poisson treatment (rate per km^2) and outcome,
// every period sharing one covariate stack.
inline PatternSeries poisson_series(const GridPtr& g, int T, double w_rate, double y_rate, std::uint64_t seed,
                                    CovariatesPtr stack = nullptr) {
  if (!stack) stack = std::make_shared<CovariateStack>();
  Rng rng = make_rng(seed);
  const double area = g->window().area();
  std::poisson_distribution<int> nw(w_rate * area), ny(y_rate * area);
  std::vector<Period> periods;
  for (int t = 1; t <= T; ++t) {
    Period p;
    p.treatment = MarkedPointPattern(PointPattern(t, uniform_points(g, static_cast<std::size_t>(nw(rng)), rng), g->window()));
    p.outcome = PointPattern(t, uniform_points(g, static_cast<std::size_t>(ny(rng)), rng), g->window());
    p.covariates = stack;
    periods.push_back(std::move(p));
  }
  return PatternSeries(g, {}, std::move(periods));
}

}  // namespace gct
