#include "geocausal/geo_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"

namespace geocausal {

double polygon_area(const Polygon& ring) {
  const std::size_t n = ring.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Point& a = ring[k];
    const Point& b = ring[(k + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) * 0.5;
}

double distance_to_segment(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double u = 0.0;
  if (len2 > 0.0) u = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + u * vx), p.y - (a.y + u * vy));
}

bool point_in_polygon(const Polygon& ring, Point p) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t k = 0; k < n; ++k) {
    if (distance_to_segment(p, ring[k], ring[(k + 1) % n]) <= 1e-12) return true;
  }
  bool inside = false;
  for (std::size_t k = 0, m = n - 1; k < n; m = k++) {
    const Point& a = ring[k];
    const Point& b = ring[m];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xcross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < xcross) inside = !inside;
    }
  }
  return inside;
}

namespace {

// One Sutherland–Hodgman pass against the half-plane sign*(coord - edge) >= 0.
Polygon clip_half(const Polygon& in, bool vertical, double edge, double sign) {
  Polygon out;
  if (in.empty()) return out;
  auto inside = [&](const Point& p) { return sign * ((vertical ? p.x : p.y) - edge) >= 0.0; };
  auto cross = [&](const Point& a, const Point& b) {
    const double ca = vertical ? a.x : a.y;
    const double cb = vertical ? b.x : b.y;
    const double u = (edge - ca) / (cb - ca);
    return Point{a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
  };
  for (std::size_t k = 0; k < in.size(); ++k) {
    const Point& cur = in[k];
    const Point& prev = in[(k + in.size() - 1) % in.size()];
    const bool ci = inside(cur);
    const bool pi = inside(prev);
    if (ci) {
      if (!pi) out.push_back(cross(prev, cur));
      out.push_back(cur);
    } else if (pi) {
      out.push_back(cross(prev, cur));
    }
  }
  return out;
}

}  // namespace

double clipped_area(const Polygon& ring, const Box& box) {
  Polygon p = clip_half(ring, true, box.xmin, 1.0);
  p = clip_half(p, true, box.xmax, -1.0);
  p = clip_half(p, false, box.ymin, 1.0);
  p = clip_half(p, false, box.ymax, -1.0);
  return polygon_area(p);
}

SpatialWindow::SpatialWindow(Box bounds, std::optional<Polygon> mask)
    : bounds_(bounds), mask_(std::move(mask)) {
  if (!(bounds_.width() > 0.0) || !(bounds_.height() > 0.0)) {
    throw InvalidArgument("SpatialWindow: bounds must have positive width and height");
  }
  if (mask_) {
    if (mask_->size() < 3) throw InvalidArgument("SpatialWindow: polygon needs at least 3 vertices");
    for (const Point& v : *mask_) {
      if (!bounds_.contains(v)) throw InvalidArgument("SpatialWindow: polygon vertex outside bounds");
    }
    area_ = polygon_area(*mask_);
    if (!(area_ > 0.0)) throw InvalidArgument("SpatialWindow: polygon has zero area");
  } else {
    area_ = bounds_.area();
  }
}

bool SpatialWindow::contains(Point p) const {
  if (!bounds_.contains(p)) return false;
  return !mask_ || point_in_polygon(*mask_, p);
}

RasterGrid::RasterGrid(SpatialWindow window, int nx, int ny)
    : window_(std::move(window)), nx_(nx), ny_(ny) {
  if (nx <= 0 || ny <= 0) throw InvalidArgument("build_grid: nx and ny must be >= 1");
  dx_ = window_.bounds().width() / nx_;
  dy_ = window_.bounds().height() / ny_;
  areas_.assign(size(), dx_ * dy_);
  if (const auto& poly = window_.polygon()) {
    for (std::size_t idx = 0; idx < size(); ++idx) {
      const double a = clipped_area(*poly, cell_box(idx));
      // Snap numerically full cells so unclipped interiors stay uniform.
      areas_[idx] = std::abs(a - dx_ * dy_) <= 1e-12 * dx_ * dy_ ? dx_ * dy_ : (a <= 1e-15 * dx_ * dy_ ? 0.0 : a);
      if (areas_[idx] != dx_ * dy_) uniform_ = false;
    }
  }
}

Point RasterGrid::center(std::size_t idx) const { return {center_x(col(idx)), center_y(row(idx))}; }

Box RasterGrid::cell_box(std::size_t idx) const {
  const Box& b = window_.bounds();
  const int i = col(idx);
  const int j = row(idx);
  const double x0 = b.xmin + i * dx_;
  const double y0 = b.ymin + j * dy_;
  return {x0, y0, i + 1 == nx_ ? b.xmax : x0 + dx_, j + 1 == ny_ ? b.ymax : y0 + dy_};
}

std::optional<std::size_t> RasterGrid::cell_of(Point p) const {
  const Box& b = window_.bounds();
  if (!b.contains(p)) return std::nullopt;
  const int i = std::clamp(static_cast<int>(std::floor((p.x - b.xmin) / dx_)), 0, nx_ - 1);
  const int j = std::clamp(static_cast<int>(std::floor((p.y - b.ymin) / dy_)), 0, ny_ - 1);
  return index(i, j);
}

bool RasterGrid::same_geometry(const RasterGrid& other) const {
  return this == &other || (nx_ == other.nx_ && ny_ == other.ny_ && window_ == other.window_);
}

GridPtr build_grid(const SpatialWindow& window, int nx, int ny) {
  return std::make_shared<const RasterGrid>(window, nx, ny);
}

Raster::Raster(GridPtr grid, double fill) : grid_(std::move(grid)) {
  if (!grid_) throw InvalidArgument("Raster: null grid");
  values_.assign(grid_->size(), fill);
}

Raster::Raster(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
  if (!grid_) throw InvalidArgument("Raster: null grid");
  if (values_.size() != grid_->size()) throw InvalidArgument("Raster: value count does not match grid");
}

double Raster::sample(Point p) const {
  const auto idx = grid_->cell_of(p);
  return idx ? values_[*idx] : std::numeric_limits<double>::quiet_NaN();
}

bool Raster::has_nodata() const {
  return std::any_of(values_.begin(), values_.end(), [](double v) { return std::isnan(v); });
}

Raster Raster::scaled(double factor) const {
  std::vector<double> out(values_);
  for (double& v : out) v *= factor;
  return Raster(grid_, std::move(out));
}

void require_same_grid(const RasterGrid& a, const RasterGrid& b, const char* what) {
  if (!a.same_geometry(b)) throw InvalidArgument(std::string(what) + ": rasters are on different grids");
}

Region::Region(GridPtr grid, std::vector<std::uint8_t> mask, std::optional<Polygon> polygon, std::string label)
    : grid_(std::move(grid)), mask_(std::move(mask)), polygon_(std::move(polygon)), label_(std::move(label)) {
  if (!grid_) throw InvalidArgument("Region: null grid");
  if (mask_.size() != grid_->size()) throw InvalidArgument("Region: mask size does not match grid");
  bool any = false;
  int i0 = grid_->nx(), i1 = -1, j0 = grid_->ny(), j1 = -1;
  for (std::size_t idx = 0; idx < mask_.size(); ++idx) {
    if (mask_[idx] && !grid_->active(idx)) mask_[idx] = 0;
    if (!mask_[idx]) continue;
    any = true;
    i0 = std::min(i0, grid_->col(idx));
    i1 = std::max(i1, grid_->col(idx));
    j0 = std::min(j0, grid_->row(idx));
    j1 = std::max(j1, grid_->row(idx));
  }
  if (!any) throw InvalidArgument("Region '" + label_ + "' contains no active cell of the grid");
  bool rect = true;
  for (int j = j0; j <= j1 && rect; ++j) {
    for (int i = i0; i <= i1; ++i) {
      const std::size_t idx = grid_->index(i, j);
      if (!mask_[idx] || grid_->cell_area(idx) != grid_->full_cell_area()) {
        rect = false;
        break;
      }
    }
  }
  if (rect) rect_ = CellRect{i0, i1, j0, j1};
}

Region Region::whole(GridPtr grid, std::string label) {
  std::vector<std::uint8_t> mask(grid->size(), 1);
  return Region(std::move(grid), std::move(mask), std::nullopt, std::move(label));
}

Region Region::from_polygon(GridPtr grid, Polygon polygon, std::string label) {
  if (polygon.size() < 3) throw InvalidArgument("Region: polygon needs at least 3 vertices");
  std::vector<std::uint8_t> mask(grid->size(), 0);
  for (std::size_t idx = 0; idx < mask.size(); ++idx) mask[idx] = point_in_polygon(polygon, grid->center(idx)) ? 1 : 0;
  return Region(std::move(grid), std::move(mask), std::move(polygon), std::move(label));
}

Region Region::from_mask(GridPtr grid, std::vector<std::uint8_t> mask, std::string label) {
  return Region(std::move(grid), std::move(mask), std::nullopt, std::move(label));
}

Region Region::from_box(GridPtr grid, const Box& box, std::string label) {
  Polygon ring{{box.xmin, box.ymin}, {box.xmax, box.ymin}, {box.xmax, box.ymax}, {box.xmin, box.ymax}};
  return from_polygon(std::move(grid), std::move(ring), std::move(label));
}

bool Region::contains(Point p) const {
  if (polygon_) return point_in_polygon(*polygon_, p) && grid_->window().contains(p);
  const auto idx = grid_->cell_of(p);
  return idx && mask_[*idx] && grid_->window().contains(p);
}

double Region::area() const { return integrate_raster(Raster(grid_, 1.0), *this); }

Region Region::united(const Region& other) const {
  require_same_grid(*grid_, *other.grid_, "Region::united");
  std::vector<std::uint8_t> mask(mask_.size());
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = (mask_[k] || other.mask_[k]) ? 1 : 0;
  return Region(grid_, std::move(mask), std::nullopt, label_ + "+" + other.label_);
}

DistanceMap distance_map(const GridPtr& grid, std::span<const Point> points) {
  if (points.empty()) throw InvalidArgument("distance_map: empty feature set");
  std::vector<double> d(grid->size());
  for (std::size_t idx = 0; idx < d.size(); ++idx) {
    const Point c = grid->center(idx);
    double best = std::numeric_limits<double>::infinity();
    for (const Point& p : points) best = std::min(best, std::hypot(c.x - p.x, c.y - p.y));
    d[idx] = best;
  }
  return {Raster(grid, std::move(d))};
}

DistanceMap distance_map(const GridPtr& grid, std::span<const Polyline> polylines) {
  bool any = false;
  for (const auto& line : polylines) any = any || !line.empty();
  if (!any) throw InvalidArgument("distance_map: empty feature set");
  std::vector<double> d(grid->size());
  for (std::size_t idx = 0; idx < d.size(); ++idx) {
    const Point c = grid->center(idx);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& line : polylines) {
      if (line.size() == 1) best = std::min(best, std::hypot(c.x - line[0].x, c.y - line[0].y));
      for (std::size_t k = 0; k + 1 < line.size(); ++k) best = std::min(best, distance_to_segment(c, line[k], line[k + 1]));
    }
    d[idx] = best;
  }
  return {Raster(grid, std::move(d))};
}

Raster decay_transform(const DistanceMap& map, double coef) {
  if (!(coef < 0.0)) throw InvalidArgument("decay_transform: coefficient must be negative");
  std::vector<double> out(map.distances.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double d = map.distances[k];
    out[k] = std::isinf(d) ? 0.0 : std::exp(coef * d);
  }
  return Raster(map.distances.grid(), std::move(out));
}

double integrate_raster(const Raster& raster, const Region& region) {
  require_same_grid(*raster.grid(), *region.grid(), "integrate_raster");
  const RasterGrid& g = *raster.grid();
  std::vector<double> terms;
  terms.reserve(g.size());
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    if (!region.includes_cell(idx)) continue;
    const double v = raster[idx];
    if (std::isnan(v)) continue;
    terms.push_back(v * g.cell_area(idx));
  }
  return pairwise_sum(terms);
}

double integrate_raster(const Raster& raster) {
  const RasterGrid& g = *raster.grid();
  std::vector<double> terms;
  terms.reserve(g.size());
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const double v = raster[idx];
    if (!g.active(idx) || std::isnan(v)) continue;
    terms.push_back(v * g.cell_area(idx));
  }
  return pairwise_sum(terms);
}

Raster normalize_raster(const Raster& raster) {
  const double total = integrate_raster(raster);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw InvalidArgument("normalize_raster: total mass must be positive and finite");
  }
  return raster.scaled(1.0 / total);
}

}  // namespace geocausal
