#pragma once

// Spatiotemporal data model: per-period treatment patterns (optionally
// marked), outcome patterns and covariate rasters on one shared grid.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geocausal/geo_core.hpp"

namespace geocausal {

class PointPattern {
 public:
  PointPattern() = default;
  // Throws if any point lies outside the window.
  PointPattern(int t, std::vector<Point> points, const SpatialWindow& window);
  // Trusted constructor used by samplers that place points inside the window.
  static PointPattern unchecked(int t, std::vector<Point> points);

  int time() const { return t_; }
  const std::vector<Point>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  // Number of points that repeat an earlier location exactly.
  std::size_t duplicate_count() const;

 private:
  int t_ = 0;
  std::vector<Point> points_;
};

inline constexpr int kUnmarked = -1;

// Marks index into the series' label set; kUnmarked when not observed.
class MarkedPointPattern {
 public:
  MarkedPointPattern() = default;
  MarkedPointPattern(PointPattern base, std::vector<int> marks);
  explicit MarkedPointPattern(PointPattern base);

  const PointPattern& base() const { return base_; }
  const std::vector<Point>& points() const { return base_.points(); }
  const std::vector<int>& marks() const { return marks_; }
  std::size_t size() const { return base_.size(); }
  bool fully_marked() const;
  // Indices of points carrying the given mark (a subset of the base points).
  std::vector<std::size_t> active(int mark) const;

 private:
  PointPattern base_;
  std::vector<int> marks_;
};

// Named covariate rasters for one period; layers may be shared across periods.
struct CovariateStack {
  std::vector<std::string> names;
  std::vector<std::shared_ptr<const Raster>> layers;

  void add(std::string name, std::shared_ptr<const Raster> layer);
  const Raster* find(const std::string& name) const;
  const Raster& get(const std::string& name) const;
};

using CovariatesPtr = std::shared_ptr<const CovariateStack>;

struct Period {
  MarkedPointPattern treatment;
  PointPattern outcome;
  CovariatesPtr covariates;
};

class PatternSeries {
 public:
  PatternSeries(GridPtr grid, std::vector<std::string> mark_labels, std::vector<Period> periods);

  const GridPtr& grid() const { return grid_; }
  int T() const { return static_cast<int>(periods_.size()); }
  // 1-based period access.
  const Period& at(int t) const;
  const std::vector<Period>& periods() const { return periods_; }
  const std::vector<std::string>& mark_labels() const { return mark_labels_; }
  int mark_index(const std::string& label) const;  // -1 if absent

  // Series restricted to periods 1..t_end (used for out-of-sample refits).
  PatternSeries prefix(int t_end) const;

 private:
  GridPtr grid_;
  std::vector<std::string> mark_labels_;
  std::vector<Period> periods_;
};

enum class Kernel { gaussian, epanechnikov };

struct SmoothingSpec {
  double bandwidth = 1.0;  // km; Gaussian sd, or Epanechnikov support radius
  Kernel kernel = Kernel::gaussian;
};

void validate(const SmoothingSpec& spec);
Kernel parse_kernel(const std::string& name);
std::string to_string(Kernel k);

// Two-dimensional isotropic kernel density with unit planar mass.
double kernel_value(const SmoothingSpec& spec, double distance);

std::size_t count_in_region(const PointPattern& pattern, const Region& region);

// Surface value at each cell center: sum over points of K_b(|c - s|).
Raster kernel_smooth(const PointPattern& pattern, const SmoothingSpec& spec, const GridPtr& grid);
Raster kernel_smooth(std::span<const Point> points, std::span<const double> weights, const SmoothingSpec& spec,
                     const GridPtr& grid);

// Midpoint-rule kernel integrals of single points over regions. This is the
// path every estimator uses for the integral of a smoothed outcome.
class KernelIntegrator {
 public:
  KernelIntegrator(GridPtr grid, SmoothingSpec spec);

  const SmoothingSpec& spec() const { return spec_; }
  const GridPtr& grid() const { return grid_; }

  double mass(Point s, const Region& region) const;
  double pattern_mass(const PointPattern& pattern, const Region& region) const;
  // Adds weight * K(c - s) * area(c) to out[c] for every active cell.
  void accumulate_cells(Point s, double weight, std::span<double> out) const;

 private:
  void axis_factors(Point s, std::vector<double>& gx, std::vector<double>& gy) const;

  GridPtr grid_;
  SmoothingSpec spec_;
};

// Scott's rule on pooled points: sqrt((var_x + var_y) / 2) * n^(-1/6).
double scott_bandwidth(std::span<const PointPattern> patterns);
double scott_bandwidth(const PatternSeries& series);

// Share of points within `distance` of the window boundary.
double boundary_fraction(const PatternSeries& series, double distance);

struct HistoryMaps {
  std::vector<std::string> names;
  std::vector<Raster> maps;
  bool truncated = false;  // some lag reached before period 1
};

// For each lag l: decay of the distance to all events in periods [t-l, t-1],
// separately for the treatment and outcome streams. Empty sets give 0.
HistoryMaps history_maps(const PatternSeries& series, int t, std::span<const int> lags,
                         double coef = decay_defaults::kHistory);
std::string history_name(const std::string& stream, int lag);

struct EventRecord {
  int t = 0;
  Point location;
  bool treatment = true;
  std::string mark;
};

// CSV with header columns t,x,y,stream[,mark]; malformed rows raise IoError
// naming the line.
std::vector<EventRecord> read_events_csv(const std::filesystem::path& path);
void write_events_csv(const std::filesystem::path& path, const PatternSeries& series);

// Builds periods 1..T from event records. Points outside the window raise.
PatternSeries build_series(const GridPtr& grid, const std::vector<EventRecord>& events, int T,
                           CovariatesPtr covariates, std::vector<std::string> mark_labels = {});

}  // namespace geocausal
