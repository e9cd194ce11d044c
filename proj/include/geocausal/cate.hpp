#pragma once

// Pixel-level effects on a grid-aligned partition and their least-squares
// projection onto moderator bases, averaged over periods.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "geocausal/ate.hpp"
#include "geocausal/geo_core.hpp"
#include "geocausal/point_patterns.hpp"
#include "geocausal/splines.hpp"

namespace geocausal {

// Disjoint pixels covering the active cells of the grid.
class PixelPartition {
 public:
  // factor x factor cell blocks; blocks without active cells are dropped.
  static PixelPartition blocks(const GridPtr& grid, int factor);
  // Arbitrary labels 0..p-1 per cell (inactive cells ignored).
  static PixelPartition from_labels(const GridPtr& grid, std::vector<int> labels);

  const GridPtr& grid() const { return grid_; }
  std::size_t size() const { return cells_.size(); }
  int label(std::size_t cell) const { return labels_[cell]; }
  const std::vector<std::size_t>& cells(std::size_t pixel) const { return cells_[pixel]; }
  // Block coordinates (row, col) of a pixel when built from blocks.
  std::optional<std::pair<int, int>> block_coordinates(std::size_t pixel) const;
  std::optional<std::size_t> pixel_at(int block_row, int block_col) const;
  int factor() const { return factor_; }
  // Mean of a raster over each pixel (area weighted); NaN if any cell is NaN.
  std::vector<double> pixel_means(const Raster& raster) const;

 private:
  PixelPartition(GridPtr grid, std::vector<int> labels, int factor);

  GridPtr grid_;
  std::vector<int> labels_;
  std::vector<std::vector<std::size_t>> cells_;
  int factor_ = 0;
  std::vector<std::pair<int, int>> coords_;
};

// Kernel mass of the smoothed outcome of period t within each pixel.
std::vector<double> pixel_outcome_masses(const PatternSeries& series, const KernelIntegrator& integrator,
                                         const PixelPartition& partition, int t);

// tau_it = (w'_t - w''_t) times the pixel outcome mass; Hajek mode first
// scales each weight series to mean one.
std::vector<double> pixel_effects(const PatternSeries& series, const WeightSeries& wa, const WeightSeries& wb,
                                  const SmoothingSpec& spec, const PixelPartition& partition, int t,
                                  EstimatorMode mode = EstimatorMode::ipw);

// Per-pixel, per-period moderator values (index [t-1][pixel]); NaN = missing.
struct ModeratorPanel {
  std::string name;
  std::vector<std::vector<double>> values;
  int T() const { return static_cast<int>(values.size()); }
  // Values measured at t - L + 1 (the last pre-intervention period).
  const std::vector<double>& for_effect(int t, int L) const;
};

ModeratorPanel static_moderator(std::string name, std::vector<double> pixel_values, int T);
// CSV columns pixel_row,pixel_col,t,name,value for block partitions.
std::map<std::string, ModeratorPanel> read_moderators_csv(const std::filesystem::path& path,
                                                         const PixelPartition& partition, int T);

enum class MissingModerator { exclude, zero };

// Regressors z(r) including the leading intercept column.
class ModeratorBasis {
 public:
  static ModeratorBasis intercept_only();
  static ModeratorBasis spline(const NaturalCubicBasis& basis);  // df = 1 is linear
  static ModeratorBasis linear();
  // Saturated indicator coding for a discrete moderator: intercept plus one
  // indicator per level after the first.
  static ModeratorBasis levels(std::vector<double> levels);

  int dimension() const;
  std::vector<std::string> names() const;
  void evaluate_into(double r, std::span<double> out) const;
  Eigen::VectorXd evaluate(double r) const;
  nlohmann::json describe() const;

 private:
  enum class Kind { intercept, linear, spline, levels };
  Kind kind_ = Kind::intercept;
  std::optional<NaturalCubicBasis> spline_;
  std::vector<double> levels_;
};

// Time-specific OLS of pixel effects on the moderator basis.
Eigen::VectorXd project_cate_t(std::span<const double> effects, std::span<const double> moderators,
                               const ModeratorBasis& basis, MissingModerator missing = MissingModerator::exclude);

struct CateValue {
  double r = 0.0;
  double value = 0.0;
  double variance = 0.0;
  Interval ci90, ci95;
};

struct ProjectionEstimate {
  int L = 1;
  std::vector<std::string> names;
  Eigen::MatrixXd per_t;    // rows t = L..T, one column per basis function
  Eigen::VectorXd beta_bar;
  nlohmann::json basis;

  // Variance device: mean over t of (c' beta_t)^2.
  CateValue evaluate(const ModeratorBasis& basis, double r) const;
  CateValue linear_combination(const Eigen::VectorXd& c) const;
  CateValue coefficient(int k) const;
};

ProjectionEstimate average_projection(const Eigen::MatrixXd& per_t, std::vector<std::string> names, int L);

struct CateOptions {
  EstimatorMode mode = EstimatorMode::ipw;
  MissingModerator missing = MissingModerator::exclude;
};

ProjectionEstimate estimate_cate(const PatternSeries& series, const WeightSeries& wa, const WeightSeries& wb,
                                 const SmoothingSpec& spec, const PixelPartition& partition,
                                 const ModeratorPanel& moderator, const ModeratorBasis& basis,
                                 const CateOptions& options = {});

nlohmann::json to_json(const ProjectionEstimate& p);
ProjectionEstimate projection_from_json(const nlohmann::json& j);

}  // namespace geocausal
