#include "geocausal/point_patterns.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"

namespace geocausal {

PointPattern::PointPattern(int t, std::vector<Point> points, const SpatialWindow& window)
    : t_(t), points_(std::move(points)) {
  for (const Point& p : points_) {
    if (!window.contains(p)) {
      std::ostringstream msg;
      msg << "point (" << p.x << ", " << p.y << ") at period " << t << " lies outside the window";
      throw InvalidArgument(msg.str());
    }
  }
}

PointPattern PointPattern::unchecked(int t, std::vector<Point> points) {
  PointPattern p;
  p.t_ = t;
  p.points_ = std::move(points);
  return p;
}

std::size_t PointPattern::duplicate_count() const {
  std::vector<std::pair<double, double>> keys;
  keys.reserve(points_.size());
  for (const Point& p : points_) keys.emplace_back(p.x, p.y);
  std::sort(keys.begin(), keys.end());
  std::size_t dup = 0;
  for (std::size_t k = 1; k < keys.size(); ++k) dup += keys[k] == keys[k - 1] ? 1 : 0;
  return dup;
}

MarkedPointPattern::MarkedPointPattern(PointPattern base, std::vector<int> marks)
    : base_(std::move(base)), marks_(std::move(marks)) {
  if (marks_.size() != base_.size()) throw InvalidArgument("MarkedPointPattern: marks length must equal points length");
}

MarkedPointPattern::MarkedPointPattern(PointPattern base)
    : base_(std::move(base)), marks_(base_.size(), kUnmarked) {}

bool MarkedPointPattern::fully_marked() const {
  return std::none_of(marks_.begin(), marks_.end(), [](int m) { return m == kUnmarked; });
}

std::vector<std::size_t> MarkedPointPattern::active(int mark) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < marks_.size(); ++k) {
    if (marks_[k] == mark) out.push_back(k);
  }
  return out;
}

void CovariateStack::add(std::string name, std::shared_ptr<const Raster> layer) {
  if (find(name)) throw InvalidArgument("duplicate covariate name '" + name + "'");
  names.push_back(std::move(name));
  layers.push_back(std::move(layer));
}

const Raster* CovariateStack::find(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == name) return layers[k].get();
  }
  return nullptr;
}

const Raster& CovariateStack::get(const std::string& name) const {
  const Raster* r = find(name);
  if (!r) throw InvalidArgument("missing covariate '" + name + "'");
  return *r;
}

PatternSeries::PatternSeries(GridPtr grid, std::vector<std::string> mark_labels, std::vector<Period> periods)
    : grid_(std::move(grid)), mark_labels_(std::move(mark_labels)), periods_(std::move(periods)) {
  if (!grid_) throw InvalidArgument("PatternSeries: null grid");
  const std::vector<std::string>* names = nullptr;
  for (std::size_t k = 0; k < periods_.size(); ++k) {
    const Period& p = periods_[k];
    const int t = static_cast<int>(k) + 1;
    if (p.treatment.base().time() != t || p.outcome.time() != t) {
      throw InvalidArgument("PatternSeries: periods must be contiguous 1..T (mismatch at index " + std::to_string(t) + ")");
    }
    for (int m : p.treatment.marks()) {
      if (m != kUnmarked && (m < 0 || m >= static_cast<int>(mark_labels_.size()))) {
        throw InvalidArgument("PatternSeries: mark index out of range at period " + std::to_string(t));
      }
    }
    if (p.covariates) {
      for (const auto& layer : p.covariates->layers) require_same_grid(*layer->grid(), *grid_, "PatternSeries covariates");
      if (names && *names != p.covariates->names) {
        throw InvalidArgument("PatternSeries: covariate names differ at period " + std::to_string(t));
      }
      names = &p.covariates->names;
    }
  }
}

const Period& PatternSeries::at(int t) const {
  if (t < 1 || t > T()) throw InvalidArgument("PatternSeries: period " + std::to_string(t) + " out of range");
  return periods_[static_cast<std::size_t>(t - 1)];
}

int PatternSeries::mark_index(const std::string& label) const {
  for (std::size_t k = 0; k < mark_labels_.size(); ++k) {
    if (mark_labels_[k] == label) return static_cast<int>(k);
  }
  return -1;
}

PatternSeries PatternSeries::prefix(int t_end) const {
  if (t_end < 1 || t_end > T()) throw InvalidArgument("PatternSeries::prefix: bad end period");
  return PatternSeries(grid_, mark_labels_, std::vector<Period>(periods_.begin(), periods_.begin() + t_end));
}

void validate(const SmoothingSpec& spec) {
  if (!(spec.bandwidth > 0.0) || !std::isfinite(spec.bandwidth)) {
    throw InvalidArgument("SmoothingSpec: bandwidth must be positive");
  }
}

Kernel parse_kernel(const std::string& name) {
  if (name == "gaussian") return Kernel::gaussian;
  if (name == "epanechnikov") return Kernel::epanechnikov;
  throw InvalidArgument("unknown kernel '" + name + "'");
}

std::string to_string(Kernel k) { return k == Kernel::gaussian ? "gaussian" : "epanechnikov"; }

double kernel_value(const SmoothingSpec& spec, double distance) {
  const double b = spec.bandwidth;
  if (spec.kernel == Kernel::gaussian) {
    return std::exp(-0.5 * distance * distance / (b * b)) / (2.0 * std::numbers::pi * b * b);
  }
  const double u2 = distance * distance / (b * b);
  return u2 < 1.0 ? 2.0 / (std::numbers::pi * b * b) * (1.0 - u2) : 0.0;
}

std::size_t count_in_region(const PointPattern& pattern, const Region& region) {
  std::size_t n = 0;
  for (const Point& p : pattern.points()) n += region.contains(p) ? 1 : 0;
  return n;
}

Raster kernel_smooth(std::span<const Point> points, std::span<const double> weights, const SmoothingSpec& spec,
                     const GridPtr& grid) {
  validate(spec);
  if (!weights.empty() && weights.size() != points.size()) throw InvalidArgument("kernel_smooth: weight count mismatch");
  std::vector<double> out(grid->size(), 0.0);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    if (!grid->active(idx)) continue;
    const Point c = grid->center(idx);
    double s = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const double v = kernel_value(spec, std::hypot(c.x - points[k].x, c.y - points[k].y));
      s += weights.empty() ? v : weights[k] * v;
    }
    out[idx] = s;
  }
  return Raster(grid, std::move(out));
}

Raster kernel_smooth(const PointPattern& pattern, const SmoothingSpec& spec, const GridPtr& grid) {
  return kernel_smooth(pattern.points(), {}, spec, grid);
}

KernelIntegrator::KernelIntegrator(GridPtr grid, SmoothingSpec spec) : grid_(std::move(grid)), spec_(spec) {
  validate(spec_);
}

void KernelIntegrator::axis_factors(Point s, std::vector<double>& gx, std::vector<double>& gy) const {
  const double inv = 0.5 / (spec_.bandwidth * spec_.bandwidth);
  gx.resize(grid_->nx());
  gy.resize(grid_->ny());
  for (int i = 0; i < grid_->nx(); ++i) {
    const double d = grid_->center_x(i) - s.x;
    gx[i] = std::exp(-inv * d * d);
  }
  for (int j = 0; j < grid_->ny(); ++j) {
    const double d = grid_->center_y(j) - s.y;
    gy[j] = std::exp(-inv * d * d);
  }
}

double KernelIntegrator::mass(Point s, const Region& region) const {
  const double b = spec_.bandwidth;
  if (spec_.kernel == Kernel::gaussian) {
    const double norm = 1.0 / (2.0 * std::numbers::pi * b * b);
    const double inv = 0.5 / (b * b);
    if (const auto& rect = region.rectangle()) {
      double sx = 0.0;
      for (int i = rect->i0; i <= rect->i1; ++i) {
        const double d = grid_->center_x(i) - s.x;
        sx += std::exp(-inv * d * d);
      }
      double sy = 0.0;
      for (int j = rect->j0; j <= rect->j1; ++j) {
        const double d = grid_->center_y(j) - s.y;
        sy += std::exp(-inv * d * d);
      }
      return norm * grid_->full_cell_area() * sx * sy;
    }
    thread_local std::vector<double> gx, gy, terms;
    axis_factors(s, gx, gy);
    terms.clear();
    for (std::size_t idx = 0; idx < grid_->size(); ++idx) {
      if (!region.includes_cell(idx)) continue;
      terms.push_back(gx[grid_->col(idx)] * gy[grid_->row(idx)] * grid_->cell_area(idx));
    }
    return norm * pairwise_sum(terms);
  }
  thread_local std::vector<double> terms;
  terms.clear();
  for (std::size_t idx = 0; idx < grid_->size(); ++idx) {
    if (!region.includes_cell(idx)) continue;
    const Point c = grid_->center(idx);
    terms.push_back(kernel_value(spec_, std::hypot(c.x - s.x, c.y - s.y)) * grid_->cell_area(idx));
  }
  return pairwise_sum(terms);
}

double KernelIntegrator::pattern_mass(const PointPattern& pattern, const Region& region) const {
  double total = 0.0;
  for (const Point& p : pattern.points()) total += mass(p, region);
  return total;
}

void KernelIntegrator::accumulate_cells(Point s, double weight, std::span<double> out) const {
  if (out.size() != grid_->size()) throw InvalidArgument("accumulate_cells: buffer size mismatch");
  const double b = spec_.bandwidth;
  if (spec_.kernel == Kernel::gaussian) {
    thread_local std::vector<double> gx, gy;
    axis_factors(s, gx, gy);
    const double scale = weight / (2.0 * std::numbers::pi * b * b);
    for (int j = 0; j < grid_->ny(); ++j) {
      const double fy = scale * gy[j];
      if (fy == 0.0) continue;
      for (int i = 0; i < grid_->nx(); ++i) {
        const std::size_t idx = grid_->index(i, j);
        out[idx] += fy * gx[i] * grid_->cell_area(idx);
      }
    }
    return;
  }
  for (std::size_t idx = 0; idx < grid_->size(); ++idx) {
    if (!grid_->active(idx)) continue;
    const Point c = grid_->center(idx);
    out[idx] += weight * kernel_value(spec_, std::hypot(c.x - s.x, c.y - s.y)) * grid_->cell_area(idx);
  }
}

double scott_bandwidth(std::span<const PointPattern> patterns) {
  double n = 0.0, mx = 0.0, my = 0.0;
  for (const auto& p : patterns) {
    for (const Point& s : p.points()) {
      n += 1.0;
      mx += s.x;
      my += s.y;
    }
  }
  if (n < 2.0) throw InvalidArgument("scott_bandwidth: need at least two points");
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& p : patterns) {
    for (const Point& s : p.points()) {
      vx += (s.x - mx) * (s.x - mx);
      vy += (s.y - my) * (s.y - my);
    }
  }
  vx /= (n - 1.0);
  vy /= (n - 1.0);
  const double b = std::sqrt(0.5 * (vx + vy)) * std::pow(n, -1.0 / 6.0);
  if (!(b > 0.0)) throw InvalidArgument("scott_bandwidth: degenerate point spread");
  return b;
}

double scott_bandwidth(const PatternSeries& series) {
  std::vector<PointPattern> outcomes;
  outcomes.reserve(series.periods().size());
  for (const auto& p : series.periods()) outcomes.push_back(p.outcome);
  return scott_bandwidth(outcomes);
}

double boundary_fraction(const PatternSeries& series, double distance) {
  const SpatialWindow& w = series.grid()->window();
  std::vector<Point> ring;
  if (w.polygon()) {
    ring = *w.polygon();
  } else {
    const Box& b = w.bounds();
    ring = {{b.xmin, b.ymin}, {b.xmax, b.ymin}, {b.xmax, b.ymax}, {b.xmin, b.ymax}};
  }
  std::size_t n = 0, near = 0;
  for (const auto& period : series.periods()) {
    for (const Point& p : period.outcome.points()) {
      ++n;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < ring.size(); ++k) best = std::min(best, distance_to_segment(p, ring[k], ring[(k + 1) % ring.size()]));
      near += best < distance ? 1 : 0;
    }
  }
  return n ? static_cast<double>(near) / static_cast<double>(n) : 0.0;
}

std::string history_name(const std::string& stream, int lag) { return stream + "_history_" + std::to_string(lag); }

HistoryMaps history_maps(const PatternSeries& series, int t, std::span<const int> lags, double coef) {
  if (t <= 0) throw InvalidArgument("history_maps: period must be >= 1");
  if (t > series.T()) throw InvalidArgument("history_maps: period beyond series end");
  HistoryMaps out;
  for (const char* stream : {"treatment", "outcome"}) {
    const bool treat = std::string(stream) == "treatment";
    for (int lag : lags) {
      if (lag < 1) throw InvalidArgument("history_maps: lags must be >= 1");
      if (t - lag < 1) out.truncated = true;
      std::vector<Point> events;
      for (int s = std::max(1, t - lag); s <= t - 1; ++s) {
        const auto& pts = treat ? series.at(s).treatment.points() : series.at(s).outcome.points();
        events.insert(events.end(), pts.begin(), pts.end());
      }
      out.names.push_back(history_name(stream, lag));
      if (events.empty()) {
        out.maps.emplace_back(series.grid(), 0.0);
      } else {
        out.maps.push_back(decay_transform(distance_map(series.grid(), events), coef));
      }
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::vector<EventRecord> read_events_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open events file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const auto header = split_csv(line);
  int ct = -1, cx = -1, cy = -1, cs = -1, cm = -1;
  for (int k = 0; k < static_cast<int>(header.size()); ++k) {
    if (header[k] == "t") ct = k;
    if (header[k] == "x") cx = k;
    if (header[k] == "y") cy = k;
    if (header[k] == "stream") cs = k;
    if (header[k] == "mark") cm = k;
  }
  if (ct < 0 || cx < 0 || cy < 0 || cs < 0) throw IoError(path.string() + ":1: header must contain t,x,y,stream");
  std::vector<EventRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv(line);
    auto fail = [&](const std::string& why) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != header.size()) fail("expected " + std::to_string(header.size()) + " fields");
    EventRecord r;
    try {
      std::size_t used = 0;
      const long t = std::stol(f[ct], &used);
      if (used != f[ct].size()) fail("t must be an integer");
      r.t = static_cast<int>(t);
      r.location.x = std::stod(f[cx], &used);
      if (used != f[cx].size()) fail("bad x");
      r.location.y = std::stod(f[cy], &used);
      if (used != f[cy].size()) fail("bad y");
    } catch (const IoError&) {
      throw;
    } catch (...) {
      fail("non-numeric t/x/y");
    }
    if (r.t < 1) fail("t must be >= 1");
    if (!std::isfinite(r.location.x) || !std::isfinite(r.location.y)) fail("non-finite coordinate");
    if (f[cs] == "treatment") {
      r.treatment = true;
    } else if (f[cs] == "outcome") {
      r.treatment = false;
    } else {
      fail("stream must be 'treatment' or 'outcome'");
    }
    if (cm >= 0) r.mark = f[cm];
    if (!r.treatment && !r.mark.empty()) fail("marks are only allowed on treatment rows");
    out.push_back(std::move(r));
  }
  return out;
}

void write_events_csv(const std::filesystem::path& path, const PatternSeries& series) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,x,y,stream,mark\n";
  out.precision(17);
  for (const auto& p : series.periods()) {
    const auto& tr = p.treatment;
    for (std::size_t k = 0; k < tr.size(); ++k) {
      out << tr.base().time() << "," << tr.points()[k].x << "," << tr.points()[k].y << ",treatment,";
      if (tr.marks()[k] != kUnmarked) out << series.mark_labels()[static_cast<std::size_t>(tr.marks()[k])];
      out << "\n";
    }
    for (const Point& s : p.outcome.points()) out << p.outcome.time() << "," << s.x << "," << s.y << ",outcome,\n";
  }
}

PatternSeries build_series(const GridPtr& grid, const std::vector<EventRecord>& events, int T,
                           CovariatesPtr covariates, std::vector<std::string> mark_labels) {
  if (T < 1) throw InvalidArgument("build_series: T must be >= 1");
  if (mark_labels.empty()) {
    std::set<std::string> seen;
    for (const auto& e : events) {
      if (!e.mark.empty()) seen.insert(e.mark);
    }
    mark_labels.assign(seen.begin(), seen.end());
  }
  std::vector<std::vector<Point>> tp(T), op(T);
  std::vector<std::vector<int>> tm(T);
  for (const auto& e : events) {
    if (e.t > T) throw InvalidArgument("build_series: event at period " + std::to_string(e.t) + " beyond T");
    if (e.treatment) {
      tp[e.t - 1].push_back(e.location);
      int m = kUnmarked;
      if (!e.mark.empty()) {
        auto it = std::find(mark_labels.begin(), mark_labels.end(), e.mark);
        if (it == mark_labels.end()) throw InvalidArgument("build_series: unknown mark '" + e.mark + "'");
        m = static_cast<int>(it - mark_labels.begin());
      }
      tm[e.t - 1].push_back(m);
    } else {
      op[e.t - 1].push_back(e.location);
    }
  }
  std::vector<Period> periods;
  periods.reserve(T);
  for (int t = 1; t <= T; ++t) {
    Period p;
    p.treatment = MarkedPointPattern(PointPattern(t, std::move(tp[t - 1]), grid->window()), std::move(tm[t - 1]));
    p.outcome = PointPattern(t, std::move(op[t - 1]), grid->window());
    p.covariates = covariates;
    periods.push_back(std::move(p));
  }
  return PatternSeries(grid, std::move(mark_labels), std::move(periods));
}

}  // namespace geocausal
