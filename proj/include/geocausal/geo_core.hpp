#pragma once

// Planar geometry, raster grids, regions and distance maps. Coordinates are
// planar kilometres; every spatial integral is a midpoint rule on one grid.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geocausal {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;   // implicitly closed ring
using Polyline = std::vector<Point>;

struct Box {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  bool contains(Point p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
  friend bool operator==(const Box&, const Box&) = default;
};

double polygon_area(const Polygon& ring);
// Inside-or-on-edge test.
bool point_in_polygon(const Polygon& ring, Point p);
double distance_to_segment(Point p, Point a, Point b);
// Area of ring ∩ box (Sutherland–Hodgman clip against the box).
double clipped_area(const Polygon& ring, const Box& box);

class SpatialWindow {
 public:
  explicit SpatialWindow(Box bounds, std::optional<Polygon> mask = std::nullopt);

  const Box& bounds() const { return bounds_; }
  const std::optional<Polygon>& polygon() const { return mask_; }
  double area() const { return area_; }
  bool contains(Point p) const;
  friend bool operator==(const SpatialWindow&, const SpatialWindow&) = default;

 private:
  Box bounds_;
  std::optional<Polygon> mask_;
  double area_ = 0.0;
};

// nx columns by ny rows; cell (i, j) has its lower-left corner at
// (xmin + i*dx, ymin + j*dy) and flat index j*nx + i (row-major from the
// south edge). Cell areas are the area of the cell inside the window, so
// partially covered cells carry fractional weight and masked cells weight 0.
class RasterGrid {
 public:
  RasterGrid(SpatialWindow window, int nx, int ny);

  const SpatialWindow& window() const { return window_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  double full_cell_area() const { return dx_ * dy_; }

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx_ + i; }
  int col(std::size_t idx) const { return static_cast<int>(idx % nx_); }
  int row(std::size_t idx) const { return static_cast<int>(idx / nx_); }
  Point center(std::size_t idx) const;
  double center_x(int i) const { return window_.bounds().xmin + (i + 0.5) * dx_; }
  double center_y(int j) const { return window_.bounds().ymin + (j + 0.5) * dy_; }
  Box cell_box(std::size_t idx) const;
  double cell_area(std::size_t idx) const { return areas_[idx]; }
  std::span<const double> cell_areas() const { return areas_; }
  bool active(std::size_t idx) const { return areas_[idx] > 0.0; }
  // True when no cell is clipped by a polygon mask.
  bool uniform() const { return uniform_; }

  // Cell containing p; points on the outer edge map to the boundary cell.
  std::optional<std::size_t> cell_of(Point p) const;

  bool same_geometry(const RasterGrid& other) const;

 private:
  SpatialWindow window_;
  int nx_;
  int ny_;
  double dx_;
  double dy_;
  std::vector<double> areas_;
  bool uniform_ = true;
};

using GridPtr = std::shared_ptr<const RasterGrid>;

GridPtr build_grid(const SpatialWindow& window, int nx, int ny);

// Per-cell real values on a grid; NaN marks NODATA.
class Raster {
 public:
  Raster() = default;
  Raster(GridPtr grid, double fill);
  Raster(GridPtr grid, std::vector<double> values);

  const GridPtr& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t idx) const { return values_[idx]; }
  double& operator[](std::size_t idx) { return values_[idx]; }
  double at(int i, int j) const { return values_[grid_->index(i, j)]; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }
  // Value of the cell containing p, NaN outside the grid.
  double sample(Point p) const;
  bool has_nodata() const;

  Raster scaled(double factor) const;

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

void require_same_grid(const RasterGrid& a, const RasterGrid& b, const char* what);

struct CellRect {
  int i0 = 0, i1 = 0;  // inclusive column range
  int j0 = 0, j1 = 0;  // inclusive row range
};

// A subset B of the window, resolved to cells whose centers lie in B.
class Region {
 public:
  static Region whole(GridPtr grid, std::string label = "window");
  static Region from_polygon(GridPtr grid, Polygon polygon, std::string label = "polygon");
  static Region from_mask(GridPtr grid, std::vector<std::uint8_t> mask, std::string label = "mask");
  static Region from_box(GridPtr grid, const Box& box, std::string label = "box");

  const GridPtr& grid() const { return grid_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  bool includes_cell(std::size_t idx) const { return mask_[idx] != 0; }
  const std::optional<Polygon>& polygon() const { return polygon_; }
  const std::string& label() const { return label_; }
  // Polygon regions test the point itself; mask regions test its cell.
  bool contains(Point p) const;
  double area() const;
  // Set when the region is a full rectangle of unclipped cells; enables
  // separable kernel integrals.
  const std::optional<CellRect>& rectangle() const { return rect_; }

  Region united(const Region& other) const;

 private:
  Region(GridPtr grid, std::vector<std::uint8_t> mask, std::optional<Polygon> polygon, std::string label);

  GridPtr grid_;
  std::vector<std::uint8_t> mask_;
  std::optional<Polygon> polygon_;
  std::string label_;
  std::optional<CellRect> rect_;
};

struct DistanceMap {
  Raster distances;  // km, +inf where the feature set is empty
};

DistanceMap distance_map(const GridPtr& grid, std::span<const Point> points);
DistanceMap distance_map(const GridPtr& grid, std::span<const Polyline> polylines);

// exp(coef * distance); +inf distance maps to 0.
Raster decay_transform(const DistanceMap& map, double coef);

// Decay coefficients (per km) used for the standard covariate families.
namespace decay_defaults {
inline constexpr double kHistory = -6.0;
inline constexpr double kRoadsRivers = -3.0;
inline constexpr double kCities[] = {-2.0, -4.0, -6.0, -8.0, -10.0};
inline constexpr double kSettlements = -12.0;
inline constexpr double kBuildings = -0.5;
inline constexpr double kCityTargeting = -20.0;
}  // namespace decay_defaults

// Midpoint rule: sum of value * cell area over active cells in the region,
// NaN cells skipped, pairwise reduction in row-major order.
double integrate_raster(const Raster& raster, const Region& region);
double integrate_raster(const Raster& raster);

Raster normalize_raster(const Raster& raster);

}  // namespace geocausal
