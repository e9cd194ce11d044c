#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geocausal/geo_core.hpp"

namespace geocausal {

struct AsciiGrid {
  Box bounds;
  int ncols = 0;
  int nrows = 0;
  std::vector<double> values;  // row-major from the south edge, NaN = NODATA
};

// ESRI ASCII grid (.asc). Accepts cellsize or dx/dy headers and both
// xllcorner and xllcenter conventions.
AsciiGrid read_ascii_grid(const std::filesystem::path& path);
void write_ascii_grid(const std::filesystem::path& path, const Raster& raster, double nodata = -9999.0);
std::string format_ascii_grid(const Raster& raster, double nodata = -9999.0);

// Re-expresses an ASCII grid on an existing analysis grid; dimensions and
// bounds must match to 1e-9 km.
Raster raster_on_grid(const AsciiGrid& ascii, const GridPtr& grid, const std::string& what);

// GeoJSON geometry readers (Geometry, Feature, or FeatureCollection, planar km).
std::vector<Polygon> read_geojson_polygons(const std::filesystem::path& path);
std::vector<Polyline> read_geojson_polylines(const std::filesystem::path& path);
std::vector<Point> read_geojson_points(const std::filesystem::path& path);

}  // namespace geocausal
