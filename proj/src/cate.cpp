#include "geocausal/cate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"
#include "geocausal/regression.hpp"

namespace geocausal {

PixelPartition::PixelPartition(GridPtr grid, std::vector<int> labels, int factor)
    : grid_(std::move(grid)), labels_(std::move(labels)), factor_(factor) {
  if (labels_.size() != grid_->size()) throw InvalidArgument("PixelPartition: one label per cell");
  int maxl = -1;
  for (std::size_t c = 0; c < labels_.size(); ++c) {
    if (!grid_->active(c)) {
      labels_[c] = -1;
      continue;
    }
    if (labels_[c] < 0) throw InvalidArgument("PixelPartition: every active cell needs a pixel label");
    maxl = std::max(maxl, labels_[c]);
  }
  cells_.assign(static_cast<std::size_t>(maxl + 1), {});
  for (std::size_t c = 0; c < labels_.size(); ++c) {
    if (labels_[c] >= 0) cells_[static_cast<std::size_t>(labels_[c])].push_back(c);
  }
  for (const auto& v : cells_) {
    if (v.empty()) throw InvalidArgument("PixelPartition: pixel labels must be contiguous with no empty pixel");
  }
  if (cells_.size() < 2) throw InvalidArgument("PixelPartition: need at least two pixels");
}

PixelPartition PixelPartition::blocks(const GridPtr& grid, int factor) {
  if (factor < 1) throw InvalidArgument("PixelPartition: block factor must be >= 1");
  const int bx = (grid->nx() + factor - 1) / factor;
  const int by = (grid->ny() + factor - 1) / factor;
  std::vector<int> block_id(static_cast<std::size_t>(bx) * by, -1);
  std::vector<int> raw(grid->size(), -1);
  std::vector<std::pair<int, int>> coords;
  for (int bj = 0; bj < by; ++bj) {
    for (int bi = 0; bi < bx; ++bi) {
      bool any = false;
      for (int j = bj * factor; j < std::min(grid->ny(), (bj + 1) * factor) && !any; ++j) {
        for (int i = bi * factor; i < std::min(grid->nx(), (bi + 1) * factor); ++i) any = any || grid->active(grid->index(i, j));
      }
      if (!any) continue;
      block_id[static_cast<std::size_t>(bj) * bx + bi] = static_cast<int>(coords.size());
      coords.emplace_back(bj, bi);
    }
  }
  for (int j = 0; j < grid->ny(); ++j) {
    for (int i = 0; i < grid->nx(); ++i) {
      raw[grid->index(i, j)] = block_id[static_cast<std::size_t>(j / factor) * bx + i / factor];
    }
  }
  PixelPartition p(grid, std::move(raw), factor);
  p.coords_ = std::move(coords);
  return p;
}

PixelPartition PixelPartition::from_labels(const GridPtr& grid, std::vector<int> labels) {
  return PixelPartition(grid, std::move(labels), 0);
}

std::optional<std::pair<int, int>> PixelPartition::block_coordinates(std::size_t pixel) const {
  if (factor_ == 0 || pixel >= coords_.size()) return std::nullopt;
  return coords_[pixel];
}

std::optional<std::size_t> PixelPartition::pixel_at(int block_row, int block_col) const {
  for (std::size_t k = 0; k < coords_.size(); ++k) {
    if (coords_[k] == std::make_pair(block_row, block_col)) return k;
  }
  return std::nullopt;
}

std::vector<double> PixelPartition::pixel_means(const Raster& raster) const {
  require_same_grid(*raster.grid(), *grid_, "pixel_means");
  std::vector<double> out(cells_.size());
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    std::vector<double> num, den;
    for (std::size_t c : cells_[k]) {
      num.push_back(raster[c] * grid_->cell_area(c));
      den.push_back(grid_->cell_area(c));
    }
    out[k] = pairwise_sum(num) / pairwise_sum(den);
  }
  return out;
}

std::vector<double> pixel_outcome_masses(const PatternSeries& series, const KernelIntegrator& integrator,
                                         const PixelPartition& partition, int t) {
  require_same_grid(*partition.grid(), *series.grid(), "pixel partition");
  thread_local std::vector<double> mass;
  mass.assign(series.grid()->size(), 0.0);
  for (const Point& s : series.at(t).outcome.points()) integrator.accumulate_cells(s, 1.0, mass);
  std::vector<double> out(partition.size());
  std::vector<double> terms;
  for (std::size_t k = 0; k < partition.size(); ++k) {
    terms.clear();
    for (std::size_t c : partition.cells(k)) terms.push_back(mass[c]);
    out[k] = pairwise_sum(terms);
  }
  return out;
}

namespace {

double mode_scale(const WeightSeries& w, EstimatorMode mode) {
  if (mode == EstimatorMode::ipw) return 1.0;
  const double s = pairwise_sum(w.weights);
  if (!(s > 0.0)) throw Error("Hajek pixel effects: weights sum to zero");
  return static_cast<double>(w.size()) / s;
}

}  // namespace

std::vector<double> pixel_effects(const PatternSeries& series, const WeightSeries& wa, const WeightSeries& wb,
                                  const SmoothingSpec& spec, const PixelPartition& partition, int t, EstimatorMode mode) {
  if (wa.L != wb.L || wa.T != wb.T) throw InvalidArgument("pixel_effects: weight series must share L and T");
  const KernelIntegrator integ(series.grid(), spec);
  auto m = pixel_outcome_masses(series, integ, partition, t);
  const double d = wa.weight(t) * mode_scale(wa, mode) - wb.weight(t) * mode_scale(wb, mode);
  for (double& v : m) v *= d;
  return m;
}

const std::vector<double>& ModeratorPanel::for_effect(int t, int L) const {
  const int tm = t - L + 1;
  if (tm < 1 || tm > T()) throw InvalidArgument("moderator '" + name + "' has no values for period " + std::to_string(tm));
  return values[static_cast<std::size_t>(tm - 1)];
}

ModeratorPanel static_moderator(std::string name, std::vector<double> pixel_values, int T) {
  ModeratorPanel p;
  p.name = std::move(name);
  p.values.assign(static_cast<std::size_t>(T), pixel_values);
  return p;
}

std::map<std::string, ModeratorPanel> read_moderators_csv(const std::filesystem::path& path,
                                                         const PixelPartition& partition, int T) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read moderators file " + path.string());
  if (partition.factor() == 0) throw InvalidArgument("moderator CSV needs a block partition");
  std::string line;
  std::getline(in, line);
  std::map<std::string, ModeratorPanel> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& s : f) {
      if (!std::getline(ss, s, ',')) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    }
    int row = 0, col = 0, t = 0;
    double value = 0.0;
    try {
      row = std::stoi(f[0]);
      col = std::stoi(f[1]);
      t = std::stoi(f[2]);
      value = f[4].empty() || f[4] == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[4]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    const auto pix = partition.pixel_at(row, col);
    if (!pix) throw IoError(path.string() + ":" + std::to_string(lineno) + ": no pixel at that row/col");
    if (t < 1 || t > T) throw IoError(path.string() + ":" + std::to_string(lineno) + ": period out of range");
    auto& panel = out[f[3]];
    if (panel.values.empty()) {
      panel.name = f[3];
      panel.values.assign(static_cast<std::size_t>(T),
                          std::vector<double>(partition.size(), std::numeric_limits<double>::quiet_NaN()));
    }
    panel.values[static_cast<std::size_t>(t - 1)][*pix] = value;
  }
  return out;
}

ModeratorBasis ModeratorBasis::intercept_only() { return ModeratorBasis(); }

ModeratorBasis ModeratorBasis::linear() {
  ModeratorBasis b;
  b.kind_ = Kind::linear;
  return b;
}

ModeratorBasis ModeratorBasis::spline(const NaturalCubicBasis& basis) {
  ModeratorBasis b;
  b.kind_ = Kind::spline;
  b.spline_ = basis;
  return b;
}

ModeratorBasis ModeratorBasis::levels(std::vector<double> levels) {
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (levels.size() < 2) throw InvalidArgument("ModeratorBasis: need at least two levels");
  ModeratorBasis b;
  b.kind_ = Kind::levels;
  b.levels_ = std::move(levels);
  return b;
}

int ModeratorBasis::dimension() const {
  switch (kind_) {
    case Kind::intercept: return 1;
    case Kind::linear: return 2;
    case Kind::spline: return 1 + spline_->dimension();
    case Kind::levels: return static_cast<int>(levels_.size());
  }
  return 1;
}

std::vector<std::string> ModeratorBasis::names() const {
  std::vector<std::string> n{"(intercept)"};
  switch (kind_) {
    case Kind::intercept: break;
    case Kind::linear: n.push_back("r"); break;
    case Kind::spline:
      for (int k = 1; k <= spline_->dimension(); ++k) n.push_back("z" + std::to_string(k));
      break;
    case Kind::levels:
      for (std::size_t k = 1; k < levels_.size(); ++k) {
        std::ostringstream s;
        s << "level_" << levels_[k];
        n.push_back(s.str());
      }
      break;
  }
  return n;
}

void ModeratorBasis::evaluate_into(double r, std::span<double> out) const {
  out[0] = 1.0;
  switch (kind_) {
    case Kind::intercept: break;
    case Kind::linear: out[1] = r; break;
    case Kind::spline: spline_->evaluate_into(r, out.subspan(1)); break;
    case Kind::levels: {
      bool found = r == levels_[0];
      for (std::size_t k = 1; k < levels_.size(); ++k) {
        out[k] = r == levels_[k] ? 1.0 : 0.0;
        found = found || r == levels_[k];
      }
      if (!found) throw InvalidArgument("ModeratorBasis: value is not one of the declared levels");
      break;
    }
  }
}

Eigen::VectorXd ModeratorBasis::evaluate(double r) const {
  Eigen::VectorXd z(dimension());
  evaluate_into(r, std::span<double>(z.data(), static_cast<std::size_t>(z.size())));
  return z;
}

nlohmann::json ModeratorBasis::describe() const {
  switch (kind_) {
    case Kind::intercept: return {{"type", "intercept"}};
    case Kind::linear: return {{"type", "linear"}};
    case Kind::spline: return {{"type", "natural_cubic"}, {"df", spline_->dimension()}, {"knots", spline_->knots()}};
    case Kind::levels: return {{"type", "levels"}, {"levels", levels_}};
  }
  return {};
}

Eigen::VectorXd project_cate_t(std::span<const double> effects, std::span<const double> moderators,
                               const ModeratorBasis& basis, MissingModerator missing) {
  if (effects.size() != moderators.size()) throw InvalidArgument("project_cate_t: one moderator per pixel");
  const int K = basis.dimension();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < effects.size(); ++i) {
    if (std::isfinite(moderators[i]) || missing == MissingModerator::zero) rows.push_back(i);
  }
  if (rows.size() < static_cast<std::size_t>(K) + 1) {
    throw InvalidArgument("project_cate_t: need at least K + 1 = " + std::to_string(K + 1) +
                          " pixels with observed moderators, got " + std::to_string(rows.size()));
  }
  Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), K);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  std::vector<double> zr(static_cast<std::size_t>(K));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double r = std::isfinite(moderators[rows[k]]) ? moderators[rows[k]] : 0.0;
    basis.evaluate_into(r, zr);
    for (int c = 0; c < K; ++c) z(static_cast<Eigen::Index>(k), c) = zr[static_cast<std::size_t>(c)];
    y[static_cast<Eigen::Index>(k)] = effects[rows[k]];
  }
  return ols(z, y, basis.names()).coefficients;
}

CateValue ProjectionEstimate::linear_combination(const Eigen::VectorXd& c) const {
  CateValue v;
  v.value = c.dot(beta_bar);
  const Eigen::VectorXd proj = per_t * c;
  std::vector<double> sq(static_cast<std::size_t>(proj.size()));
  for (Eigen::Index k = 0; k < proj.size(); ++k) sq[static_cast<std::size_t>(k)] = proj[k] * proj[k];
  const double n = static_cast<double>(sq.size());
  v.variance = pairwise_sum(sq) / n;
  const double h90 = kZ90 * std::sqrt(v.variance / n);
  const double h95 = kZ95 * std::sqrt(v.variance / n);
  v.ci90 = {v.value - h90, v.value + h90};
  v.ci95 = {v.value - h95, v.value + h95};
  return v;
}

CateValue ProjectionEstimate::evaluate(const ModeratorBasis& b, double r) const {
  CateValue v = linear_combination(b.evaluate(r));
  v.r = r;
  return v;
}

CateValue ProjectionEstimate::coefficient(int k) const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(beta_bar.size());
  c[k] = 1.0;
  return linear_combination(c);
}

ProjectionEstimate average_projection(const Eigen::MatrixXd& per_t, std::vector<std::string> names, int L) {
  if (per_t.rows() < 2) throw InvalidArgument("average_projection: need at least two periods");
  ProjectionEstimate p;
  p.L = L;
  p.names = std::move(names);
  p.per_t = per_t;
  p.beta_bar.resize(per_t.cols());
  std::vector<double> col(static_cast<std::size_t>(per_t.rows()));
  for (Eigen::Index k = 0; k < per_t.cols(); ++k) {
    for (Eigen::Index r = 0; r < per_t.rows(); ++r) col[static_cast<std::size_t>(r)] = per_t(r, k);
    p.beta_bar[k] = pairwise_sum(col) / static_cast<double>(col.size());
  }
  return p;
}

ProjectionEstimate estimate_cate(const PatternSeries& series, const WeightSeries& wa, const WeightSeries& wb,
                                 const SmoothingSpec& spec, const PixelPartition& partition,
                                 const ModeratorPanel& moderator, const ModeratorBasis& basis, const CateOptions& options) {
  if (wa.L != wb.L || wa.T != wb.T) throw InvalidArgument("estimate_cate: weight series must share L and T");
  const int L = wa.L;
  const KernelIntegrator integ(series.grid(), spec);
  const double sa = mode_scale(wa, options.mode);
  const double sb = mode_scale(wb, options.mode);
  const std::size_t n = wa.size();
  Eigen::MatrixXd betas(static_cast<Eigen::Index>(n), basis.dimension());
  parallel_for(n, [&](std::size_t k) {
    const int t = static_cast<int>(k) + L;
    auto eff = pixel_outcome_masses(series, integ, partition, t);
    const double d = wa.weight(t) * sa - wb.weight(t) * sb;
    for (double& v : eff) v *= d;
    const Eigen::VectorXd b = project_cate_t(eff, moderator.for_effect(t, L), basis, options.missing);
    betas.row(static_cast<Eigen::Index>(k)) = b.transpose();
  });
  ProjectionEstimate p = average_projection(betas, basis.names(), L);
  p.basis = basis.describe();
  return p;
}

nlohmann::json to_json(const ProjectionEstimate& p) {
  using nlohmann::json;
  json per_t = json::array();
  for (Eigen::Index r = 0; r < p.per_t.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(p.per_t.cols()));
    for (Eigen::Index k = 0; k < p.per_t.cols(); ++k) row[static_cast<std::size_t>(k)] = p.per_t(r, k);
    per_t.push_back(row);
  }
  std::vector<double> bar(p.beta_bar.data(), p.beta_bar.data() + p.beta_bar.size());
  json coefs = json::array();
  for (int k = 0; k < static_cast<int>(p.names.size()); ++k) {
    const CateValue v = p.coefficient(k);
    coefs.push_back({{"name", p.names[static_cast<std::size_t>(k)]},
                     {"estimate", v.value},
                     {"variance", v.variance},
                     {"ci90", {v.ci90.lo, v.ci90.hi}},
                     {"ci95", {v.ci95.lo, v.ci95.hi}}});
  }
  return json{{"estimand", "cate"},   {"L", p.L}, {"basis", p.basis}, {"names", p.names},
              {"beta_bar", bar},       {"coefficients", coefs}, {"per_t", per_t}};
}

ProjectionEstimate projection_from_json(const nlohmann::json& j) {
  ProjectionEstimate p;
  try {
    p.L = j.at("L").get<int>();
    p.basis = j.at("basis");
    p.names = j.at("names").get<std::vector<std::string>>();
    const auto bar = j.at("beta_bar").get<std::vector<double>>();
    p.beta_bar = Eigen::Map<const Eigen::VectorXd>(bar.data(), static_cast<Eigen::Index>(bar.size()));
    const auto rows = j.at("per_t").get<std::vector<std::vector<double>>>();
    p.per_t.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p.names.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != p.names.size()) throw InvalidArgument("cate json: per_t row width does not match names");
      for (std::size_t k = 0; k < rows[r].size(); ++k) {
        p.per_t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("cate json: ") + e.what());
  }
  return p;
}

}  // namespace geocausal
