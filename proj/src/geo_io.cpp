#include "geocausal/geo_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "geocausal/errors.hpp"

namespace geocausal {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed GeoJSON in " + path.string() + ": " + e.what());
  }
}

std::vector<nlohmann::json> geometries(const nlohmann::json& doc) {
  std::vector<nlohmann::json> out;
  const std::string type = doc.value("type", "");
  if (type == "FeatureCollection") {
    for (const auto& f : doc.at("features")) {
      auto sub = geometries(f);
      out.insert(out.end(), sub.begin(), sub.end());
    }
  } else if (type == "Feature") {
    if (!doc.at("geometry").is_null()) out.push_back(doc.at("geometry"));
  } else if (type == "GeometryCollection") {
    for (const auto& g : doc.at("geometries")) {
      auto sub = geometries(g);
      out.insert(out.end(), sub.begin(), sub.end());
    }
  } else {
    out.push_back(doc);
  }
  return out;
}

Point to_point(const nlohmann::json& c) { return {c.at(0).get<double>(), c.at(1).get<double>()}; }

std::vector<Point> to_ring(const nlohmann::json& coords) {
  std::vector<Point> ring;
  for (const auto& c : coords) ring.push_back(to_point(c));
  if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
  return ring;
}

}  // namespace

AsciiGrid read_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> tokens;
  for (std::string tok; in >> tok;) tokens.push_back(std::move(tok));
  std::map<std::string, double> header;
  std::size_t pos = 0;
  while (pos + 1 < tokens.size() && std::isalpha(static_cast<unsigned char>(tokens[pos][0]))) {
    try {
      header[lower(tokens[pos])] = std::stod(tokens[pos + 1]);
    } catch (...) {
      throw IoError(path.string() + ": bad header value for " + tokens[pos]);
    }
    pos += 2;
  }
  auto need = [&](const char* k) {
    auto it = header.find(k);
    if (it == header.end()) throw IoError(path.string() + ": missing header " + k);
    return it->second;
  };
  AsciiGrid g;
  g.ncols = static_cast<int>(need("ncols"));
  g.nrows = static_cast<int>(need("nrows"));
  if (g.ncols <= 0 || g.nrows <= 0) throw IoError(path.string() + ": non-positive grid dimensions");
  const double dx = header.count("cellsize") ? header["cellsize"] : need("dx");
  const double dy = header.count("cellsize") ? header["cellsize"] : need("dy");
  double x0 = header.count("xllcorner") ? header["xllcorner"] : need("xllcenter") - 0.5 * dx;
  double y0 = header.count("yllcorner") ? header["yllcorner"] : need("yllcenter") - 0.5 * dy;
  const double nodata = header.count("nodata_value") ? header["nodata_value"] : -9999.0;
  g.bounds = {x0, y0, x0 + dx * g.ncols, y0 + dy * g.nrows};
  g.values.assign(static_cast<std::size_t>(g.ncols) * g.nrows, 0.0);
  for (int r = 0; r < g.nrows; ++r) {
    const int j = g.nrows - 1 - r;  // file rows run north to south
    for (int i = 0; i < g.ncols; ++i) {
      if (pos >= tokens.size()) throw IoError(path.string() + ": expected " + std::to_string(g.ncols * g.nrows) + " values");
      const std::string& tok = tokens[pos++];
      double v = 0.0;
      try {
        v = std::stod(tok);
      } catch (...) {
        throw IoError(path.string() + ": non-numeric value '" + tok + "'");
      }
      g.values[static_cast<std::size_t>(j) * g.ncols + i] = v == nodata ? std::numeric_limits<double>::quiet_NaN() : v;
    }
  }
  return g;
}

std::string format_ascii_grid(const Raster& raster, double nodata) {
  const RasterGrid& g = *raster.grid();
  std::ostringstream out;
  out << "ncols " << g.nx() << "\nnrows " << g.ny() << "\n";
  out << "xllcorner " << fmt17(g.window().bounds().xmin) << "\nyllcorner " << fmt17(g.window().bounds().ymin) << "\n";
  if (g.dx() == g.dy()) {
    out << "cellsize " << fmt17(g.dx()) << "\n";
  } else {
    out << "dx " << fmt17(g.dx()) << "\ndy " << fmt17(g.dy()) << "\n";
  }
  out << "NODATA_value " << fmt17(nodata) << "\n";
  for (int j = g.ny() - 1; j >= 0; --j) {
    for (int i = 0; i < g.nx(); ++i) {
      const double v = raster.at(i, j);
      out << (i ? " " : "") << (std::isnan(v) ? fmt17(nodata) : fmt17(v));
    }
    out << "\n";
  }
  return out.str();
}

void write_ascii_grid(const std::filesystem::path& path, const Raster& raster, double nodata) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_ascii_grid(raster, nodata);
}

Raster raster_on_grid(const AsciiGrid& ascii, const GridPtr& grid, const std::string& what) {
  const Box& b = grid->window().bounds();
  const double tol = 1e-9;
  if (ascii.ncols != grid->nx() || ascii.nrows != grid->ny() || std::abs(ascii.bounds.xmin - b.xmin) > tol ||
      std::abs(ascii.bounds.ymin - b.ymin) > tol || std::abs(ascii.bounds.xmax - b.xmax) > tol ||
      std::abs(ascii.bounds.ymax - b.ymax) > tol) {
    throw InvalidArgument(what + ": raster geometry does not match the analysis grid");
  }
  return Raster(grid, ascii.values);
}

std::vector<Polygon> read_geojson_polygons(const std::filesystem::path& path) {
  std::vector<Polygon> out;
  for (const auto& g : geometries(load_json(path))) {
    const std::string type = g.value("type", "");
    if (type == "Polygon") {
      out.push_back(to_ring(g.at("coordinates").at(0)));
    } else if (type == "MultiPolygon") {
      for (const auto& poly : g.at("coordinates")) out.push_back(to_ring(poly.at(0)));
    }
  }
  if (out.empty()) throw IoError(path.string() + ": no Polygon geometry found");
  return out;
}

std::vector<Polyline> read_geojson_polylines(const std::filesystem::path& path) {
  std::vector<Polyline> out;
  for (const auto& g : geometries(load_json(path))) {
    const std::string type = g.value("type", "");
    if (type == "LineString") {
      Polyline line;
      for (const auto& c : g.at("coordinates")) line.push_back(to_point(c));
      out.push_back(std::move(line));
    } else if (type == "MultiLineString") {
      for (const auto& part : g.at("coordinates")) {
        Polyline line;
        for (const auto& c : part) line.push_back(to_point(c));
        out.push_back(std::move(line));
      }
    }
  }
  if (out.empty()) throw IoError(path.string() + ": no LineString geometry found");
  return out;
}

std::vector<Point> read_geojson_points(const std::filesystem::path& path) {
  std::vector<Point> out;
  for (const auto& g : geometries(load_json(path))) {
    const std::string type = g.value("type", "");
    if (type == "Point") {
      out.push_back(to_point(g.at("coordinates")));
    } else if (type == "MultiPoint") {
      for (const auto& c : g.at("coordinates")) out.push_back(to_point(c));
    }
  }
  if (out.empty()) throw IoError(path.string() + ": no Point geometry found");
  return out;
}

}  // namespace geocausal
