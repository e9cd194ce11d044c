#include "geocausal/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"

namespace geocausal {

double IntensityModel::period_offset(int t, const std::vector<double>& indicators) const {
  double off = 0.0;
  if (time_basis) {
    const auto z = time_basis->evaluate(static_cast<double>(t));
    for (std::size_t k = 0; k < z.size(); ++k) off += spline_coefficients[k] * z[k];
  }
  for (std::size_t k = 0; k < indicator_coefficients.size(); ++k) off += indicator_coefficients[k] * indicators.at(k);
  return off;
}

void IntensityModel::validate() const {
  if (coefficients.size() != covariates.size()) throw InvalidArgument("IntensityModel: one coefficient per covariate");
  if (indicator_coefficients.size() != indicator_names.size()) {
    throw InvalidArgument("IntensityModel: one coefficient per period indicator");
  }
  const std::size_t spline_dim = time_basis ? static_cast<std::size_t>(time_basis->dimension()) : 0;
  if (spline_coefficients.size() != spline_dim) throw InvalidArgument("IntensityModel: spline coefficient count");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::isfinite(intercept) || !std::all_of(coefficients.begin(), coefficients.end(), finite) ||
      !std::all_of(spline_coefficients.begin(), spline_coefficients.end(), finite) ||
      !std::all_of(indicator_coefficients.begin(), indicator_coefficients.end(), finite)) {
    throw InvalidArgument("IntensityModel: non-finite coefficient");
  }
}

FittedPropensity::FittedPropensity(IntensityModel model, ConvergenceReport report, PropensityOptions options)
    : model_(std::move(model)), report_(std::move(report)), options_(std::move(options)) {
  model_.validate();
  if (options_.period_indicators.size() != model_.indicator_names.size()) {
    throw InvalidArgument("FittedPropensity: indicator series do not match the model");
  }
  for (const auto& name : model_.indicator_names) {
    if (!options_.period_indicators.count(name)) throw InvalidArgument("FittedPropensity: missing indicator '" + name + "'");
  }
  if (report_.converged && !(report_.gradient_norm < report_.gradient_tolerance)) {
    throw InvalidArgument("FittedPropensity: converged flag requires gradient norm below tolerance");
  }
}

std::vector<double> FittedPropensity::indicators_at(int t) const {
  std::vector<double> out;
  out.reserve(model_.indicator_names.size());
  for (const auto& name : model_.indicator_names) {
    const auto& series = options_.period_indicators.at(name);
    if (t < 1 || t > static_cast<int>(series.size())) {
      throw InvalidArgument("indicator '" + name + "' has no value for period " + std::to_string(t));
    }
    out.push_back(series[static_cast<std::size_t>(t - 1)]);
  }
  return out;
}

namespace {

constexpr std::size_t kCellsPerBlock = 4096;

std::vector<const Raster*> resolve_layers(const CovariateStack& stack, const std::vector<std::string>& names,
                                          const RasterGrid& grid) {
  std::vector<const Raster*> out;
  for (const auto& n : names) {
    const Raster& r = stack.get(n);
    require_same_grid(*r.grid(), grid, "covariate raster");
    out.push_back(&r);
  }
  return out;
}

// Cell x period count table in the order the likelihood sums it.
class SeriesDesign : public DesignSource {
 public:
  SeriesDesign(const PatternSeries& series, const std::vector<std::string>& covariates, const PropensityOptions& options,
               const std::optional<NaturalCubicBasis>& basis, const std::vector<std::string>& indicators, bool aggregated)
      : series_(series), grid_(*series.grid()), basis_(basis), aggregated_(aggregated) {
    names_.push_back("(intercept)");
    for (const auto& c : covariates) names_.push_back(c);
    if (basis_) {
      for (int k = 1; k <= basis_->dimension(); ++k) names_.push_back("time_spline_" + std::to_string(k));
    }
    for (const auto& n : indicators) names_.push_back(n);
    std::set<std::string> uniq(names_.begin(), names_.end());
    if (uniq.size() != names_.size()) throw InvalidArgument("fit_poisson_intensity: duplicate column name");

    const int T = series.T();
    layers_.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
      const auto& cov = series.at(t).covariates;
      if (!cov && !covariates.empty()) throw InvalidArgument("fit_poisson_intensity: period without covariates");
      layers_[static_cast<std::size_t>(t - 1)] =
          covariates.empty() ? std::vector<const Raster*>{} : resolve_layers(*cov, covariates, grid_);
    }
    for (const auto& n : indicators) {
      const auto& v = options.period_indicators.at(n);
      if (static_cast<int>(v.size()) != T) {
        throw InvalidArgument("period indicator '" + n + "' must have one value per period");
      }
      indicator_values_.push_back(&v);
    }

    counts_.resize(static_cast<std::size_t>(T));
    if (aggregated_) total_.assign(grid_.size(), 0.0);
    for (int t = 1; t <= T; ++t) {
      auto& ct = counts_[static_cast<std::size_t>(t - 1)];
      std::unordered_map<std::size_t, double> m;
      for (const Point& p : series.at(t).treatment.points()) {
        const auto c = grid_.cell_of(p);
        if (!c || !valid(t, *c)) {
          ++masked_;
          continue;
        }
        m[*c] += 1.0;
      }
      ct.assign(m.begin(), m.end());
      std::sort(ct.begin(), ct.end());
      if (aggregated_) {
        for (const auto& [c, n] : ct) total_[c] += n;
      }
    }
  }

  std::size_t block_count() const override {
    if (aggregated_) return (grid_.size() + kCellsPerBlock - 1) / kCellsPerBlock;
    return static_cast<std::size_t>(series_.T());
  }
  const std::vector<std::string>& column_names() const override { return names_; }
  std::size_t events_masked() const { return masked_; }

  void fill_block(std::size_t b, DesignBlock& out) const override {
    out.rows = 0;
    out.x.clear();
    out.response.clear();
    out.exposure.clear();
    if (aggregated_) {
      const std::size_t c0 = b * kCellsPerBlock;
      const std::size_t c1 = std::min(grid_.size(), c0 + kCellsPerBlock);
      const double T = series_.T();
      for (std::size_t c = c0; c < c1; ++c) {
        if (!valid(1, c)) continue;
        push_row(1, c, total_[c], T * grid_.cell_area(c), out);
      }
      return;
    }
    const int t = static_cast<int>(b) + 1;
    std::vector<double>& dense = scratch();
    dense.assign(grid_.size(), 0.0);
    for (const auto& [c, n] : counts_[b]) dense[c] = n;
    for (std::size_t c = 0; c < grid_.size(); ++c) {
      if (!valid(t, c)) continue;
      push_row(t, c, dense[c], grid_.cell_area(c), out);
    }
  }

 private:
  static std::vector<double>& scratch() {
    thread_local std::vector<double> buf;
    return buf;
  }

  bool valid(int t, std::size_t c) const {
    if (!grid_.active(c)) return false;
    for (const Raster* r : layers_[static_cast<std::size_t>(t - 1)]) {
      if (!std::isfinite((*r)[c])) return false;
    }
    return true;
  }

  void push_row(int t, std::size_t c, double y, double exposure, DesignBlock& out) const {
    out.x.push_back(1.0);
    for (const Raster* r : layers_[static_cast<std::size_t>(t - 1)]) out.x.push_back((*r)[c]);
    if (basis_) {
      const auto z = basis_->evaluate(static_cast<double>(t));
      out.x.insert(out.x.end(), z.begin(), z.end());
    }
    for (const auto* v : indicator_values_) out.x.push_back((*v)[static_cast<std::size_t>(t - 1)]);
    out.response.push_back(y);
    out.exposure.push_back(exposure);
    ++out.rows;
  }

  const PatternSeries& series_;
  const RasterGrid& grid_;
  const std::optional<NaturalCubicBasis>& basis_;
  bool aggregated_;
  std::vector<std::string> names_;
  std::vector<std::vector<const Raster*>> layers_;
  std::vector<const std::vector<int>*> indicator_values_;
  std::vector<std::vector<std::pair<std::size_t, double>>> counts_;
  std::vector<double> total_;
  std::size_t masked_ = 0;
};

bool static_covariates(const PatternSeries& series, const std::vector<std::string>& names) {
  const auto& first = series.at(1).covariates;
  for (int t = 2; t <= series.T(); ++t) {
    const auto& cov = series.at(t).covariates;
    if (cov == first) continue;
    if (!cov || !first) return false;
    for (const auto& n : names) {
      const Raster* a = first->find(n);
      const Raster* b = cov->find(n);
      if (!a || a != b) return false;
    }
  }
  return true;
}

Raster covariate_intensity(const IntensityModel& model, const CovariateStack* covariates, const GridPtr& grid,
                           double offset) {
  std::vector<const Raster*> layers;
  if (!model.covariates.empty()) {
    if (!covariates) throw InvalidArgument("predict_intensity: no covariates supplied");
    layers = resolve_layers(*covariates, model.covariates, *grid);
  }
  const double scale = offset == 0.0 ? 1.0 : std::exp(offset);
  std::vector<double> out(grid->size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < grid->size(); ++c) {
    if (!grid->active(c)) continue;
    double eta = model.intercept;
    for (std::size_t k = 0; k < layers.size(); ++k) eta += model.coefficients[k] * (*layers[k])[c];
    if (!std::isfinite(eta)) continue;
    out[c] = std::exp(eta) * scale;
  }
  return Raster(grid, std::move(out));
}

}  // namespace

FittedPropensity fit_poisson_intensity(const PatternSeries& series, const std::vector<std::string>& covariate_names,
                                       const PropensityOptions& options) {
  if (series.T() < 1) throw InvalidArgument("fit_poisson_intensity: need at least one period");
  std::optional<NaturalCubicBasis> basis;
  if (options.time_spline_df > 0) {
    std::vector<double> ts(static_cast<std::size_t>(series.T()));
    std::iota(ts.begin(), ts.end(), 1.0);
    basis = NaturalCubicBasis::from_values(ts, options.time_spline_df);
  }
  std::vector<std::string> indicators;
  for (const auto& [name, values] : options.period_indicators) indicators.push_back(name);
  const bool aggregated = !basis && indicators.empty() && static_covariates(series, covariate_names);

  SeriesDesign design(series, covariate_names, options, basis, indicators, aggregated);
  const GlmFit glm = fit_glm(design, GlmFamily::poisson, options.glm);

  IntensityModel model;
  model.intercept = glm.coefficients[0];
  model.covariates = covariate_names;
  std::size_t k = 1;
  for (std::size_t c = 0; c < covariate_names.size(); ++c) model.coefficients.push_back(glm.coefficients[k++]);
  model.time_basis = basis;
  if (basis) {
    for (int d = 0; d < basis->dimension(); ++d) model.spline_coefficients.push_back(glm.coefficients[k++]);
  }
  model.indicator_names = indicators;
  for (std::size_t d = 0; d < indicators.size(); ++d) model.indicator_coefficients.push_back(glm.coefficients[k++]);

  ConvergenceReport report;
  report.iterations = glm.iterations;
  report.deviance = glm.deviance;
  report.converged = glm.converged;
  report.gradient_norm = glm.gradient_norm;
  report.gradient_tolerance = options.glm.gradient_tolerance;
  report.deviance_trace = glm.deviance_trace;
  report.ridge = options.glm.ridge;
  report.aggregated = aggregated;
  report.observations = glm.observations;
  report.events_masked = design.events_masked();
  return FittedPropensity(std::move(model), std::move(report), options);
}

Raster predict_intensity(const FittedPropensity& fit, const CovariateStack& covariates, int t) {
  const auto& model = fit.model();
  if (model.covariates.empty()) {
    throw InvalidArgument("predict_intensity: covariate-free model needs a grid; use predict_series");
  }
  const GridPtr& grid = covariates.get(model.covariates.front()).grid();
  return covariate_intensity(model, &covariates, grid, model.period_offset(t, fit.indicators_at(t)));
}

std::vector<std::shared_ptr<const Raster>> predict_series(const FittedPropensity& fit, const PatternSeries& series) {
  const auto& model = fit.model();
  std::vector<std::shared_ptr<const Raster>> out(static_cast<std::size_t>(series.T()));
  std::map<std::pair<const CovariateStack*, double>, std::shared_ptr<const Raster>> cache;
  for (int t = 1; t <= series.T(); ++t) {
    const CovariateStack* cov = series.at(t).covariates.get();
    const double off = model.period_offset(t, fit.indicators_at(t));
    auto key = std::make_pair(model.covariates.empty() ? nullptr : cov, off);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, std::make_shared<const Raster>(covariate_intensity(model, cov, series.grid(), off))).first;
    }
    out[static_cast<std::size_t>(t - 1)] = it->second;
  }
  return out;
}

double log_pattern_density(const Raster& intensity, const PointPattern& pattern) {
  return log_pattern_density(intensity, integrate_raster(intensity), pattern);
}

double log_pattern_density(const Raster& intensity, double integral, const PointPattern& pattern) {
  const RasterGrid& grid = *intensity.grid();
  std::vector<double> logs;
  logs.reserve(pattern.size());
  for (const Point& p : pattern.points()) {
    const auto c = grid.cell_of(p);
    const double lam = c ? intensity[*c] : std::numeric_limits<double>::quiet_NaN();
    if (!(lam > 0.0) || !std::isfinite(lam)) {
      std::ostringstream msg;
      msg << "overlap violation: event (" << p.x << ", " << p.y << ") at period " << pattern.time()
          << " falls on a cell with zero or missing intensity";
      throw OverlapViolation(msg.str(), pattern.time(), p.x, p.y);
    }
    logs.push_back(std::log(lam));
  }
  return pairwise_sum(logs) - integral;
}

namespace {

std::vector<DiagnosticRow> diagnostic_rows(const FittedPropensity& fit, const PatternSeries& series, int t0, int t1) {
  const auto lam = predict_series(fit, series);
  std::vector<DiagnosticRow> rows;
  for (int t = t0; t <= t1; ++t) {
    DiagnosticRow r;
    r.t = t;
    r.observed = static_cast<double>(series.at(t).treatment.size());
    r.expected = integrate_raster(*lam[static_cast<std::size_t>(t - 1)]);
    r.residual = r.observed - r.expected;
    rows.push_back(r);
  }
  return rows;
}

std::pair<double, double> mean_se(const std::vector<DiagnosticRow>& rows) {
  if (rows.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(rows.size());
  double m = 0.0;
  for (const auto& r : rows) m += r.residual;
  m /= n;
  if (rows.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (const auto& r : rows) ss += (r.residual - m) * (r.residual - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

FitDiagnostics fit_diagnostics(const FittedPropensity& fit, const PatternSeries& series,
                               const std::vector<std::string>& covariate_names, double split) {
  if (!(split > 0.0 && split < 1.0)) throw InvalidArgument("fit_diagnostics: split must lie in (0, 1)");
  const int T = series.T();
  const int n_train = static_cast<int>(std::floor(split * T));
  if (n_train < 1 || n_train >= T) {
    throw InvalidArgument("fit_diagnostics: split leaves no training or no held-out periods");
  }
  FitDiagnostics d;
  d.training_periods = n_train;
  d.in_sample = diagnostic_rows(fit, series, 1, T);

  PropensityOptions train_opts = fit.options();
  for (auto& [name, values] : train_opts.period_indicators) values.resize(static_cast<std::size_t>(n_train));
  const FittedPropensity trained = fit_poisson_intensity(series.prefix(n_train), covariate_names, train_opts);
  const FittedPropensity extended(trained.model(), trained.report(), fit.options());
  d.out_of_sample = diagnostic_rows(extended, series, n_train + 1, T);

  std::tie(d.in_sample_mean, d.in_sample_se) = mean_se(d.in_sample);
  std::tie(d.out_of_sample_mean, d.out_of_sample_se) = mean_se(d.out_of_sample);

  const auto& oos = d.out_of_sample;
  if (oos.size() >= 3) {
    const double n = static_cast<double>(oos.size());
    double mt = 0.0, mr = 0.0;
    for (const auto& r : oos) {
      mt += r.t;
      mr += r.residual;
    }
    mt /= n;
    mr /= n;
    double stt = 0.0, str = 0.0;
    for (const auto& r : oos) {
      stt += (r.t - mt) * (r.t - mt);
      str += (r.t - mt) * (r.residual - mr);
    }
    d.trend_slope = str / stt;
    double sse = 0.0;
    for (const auto& r : oos) {
      const double e = r.residual - mr - d.trend_slope * (r.t - mt);
      sse += e * e;
    }
    const double se = std::sqrt(sse / (n - 2.0) / stt);
    d.trend_z = se > 0.0 ? d.trend_slope / se : 0.0;
    d.trend_flagged = std::abs(d.trend_z) > 3.0;
  }
  return d;
}

nlohmann::json to_json(const FittedPropensity& fit) {
  using nlohmann::json;
  const auto& m = fit.model();
  json coefs = json::object();
  coefs["(intercept)"] = m.intercept;
  for (std::size_t k = 0; k < m.covariates.size(); ++k) coefs[m.covariates[k]] = m.coefficients[k];
  for (std::size_t k = 0; k < m.spline_coefficients.size(); ++k) {
    coefs["time_spline_" + std::to_string(k + 1)] = m.spline_coefficients[k];
  }
  for (std::size_t k = 0; k < m.indicator_names.size(); ++k) coefs[m.indicator_names[k]] = m.indicator_coefficients[k];

  const auto& o = fit.options();
  json indicators = json::object();
  for (const auto& [name, values] : o.period_indicators) indicators[name] = values;
  const auto& r = fit.report();
  return json{
      {"coefficients", coefs},
      {"covariates", m.covariates},
      {"knots", m.time_basis ? json(m.time_basis->knots()) : json::array()},
      {"options",
       {{"tolerance", o.glm.tolerance},
        {"max_iterations", o.glm.max_iterations},
        {"ridge", o.glm.ridge},
        {"gradient_tolerance", o.glm.gradient_tolerance},
        {"time_spline_df", o.time_spline_df},
        {"period_indicators", indicators}}},
      {"convergence",
       {{"iterations", r.iterations},
        {"deviance", r.deviance},
        {"converged", r.converged},
        {"gradient_norm", r.gradient_norm},
        {"deviance_trace", r.deviance_trace},
        {"aggregated", r.aggregated},
        {"observations", r.observations},
        {"events_masked", r.events_masked}}},
  };
}

FittedPropensity propensity_from_json(const nlohmann::json& j) {
  try {
    PropensityOptions o;
    const auto& jo = j.at("options");
    o.glm.tolerance = jo.at("tolerance").get<double>();
    o.glm.max_iterations = jo.at("max_iterations").get<int>();
    o.glm.ridge = jo.at("ridge").get<double>();
    o.glm.gradient_tolerance = jo.at("gradient_tolerance").get<double>();
    o.time_spline_df = jo.at("time_spline_df").get<int>();
    for (const auto& [name, values] : jo.at("period_indicators").items()) {
      o.period_indicators[name] = values.get<std::vector<int>>();
    }

    const auto& coefs = j.at("coefficients");
    IntensityModel m;
    m.intercept = coefs.at("(intercept)").get<double>();
    m.covariates = j.at("covariates").get<std::vector<std::string>>();
    for (const auto& c : m.covariates) m.coefficients.push_back(coefs.at(c).get<double>());
    const auto knots = j.at("knots").get<std::vector<double>>();
    if (!knots.empty()) {
      m.time_basis = NaturalCubicBasis(knots);
      for (int k = 1; k <= m.time_basis->dimension(); ++k) {
        m.spline_coefficients.push_back(coefs.at("time_spline_" + std::to_string(k)).get<double>());
      }
    }
    for (const auto& [name, values] : o.period_indicators) {
      m.indicator_names.push_back(name);
      m.indicator_coefficients.push_back(coefs.at(name).get<double>());
    }

    const auto& jc = j.at("convergence");
    ConvergenceReport r;
    r.iterations = jc.at("iterations").get<int>();
    r.deviance = jc.at("deviance").get<double>();
    r.converged = jc.at("converged").get<bool>();
    r.gradient_norm = jc.at("gradient_norm").get<double>();
    r.gradient_tolerance = o.glm.gradient_tolerance;
    r.deviance_trace = jc.at("deviance_trace").get<std::vector<double>>();
    r.ridge = o.glm.ridge;
    r.aggregated = jc.at("aggregated").get<bool>();
    r.observations = jc.at("observations").get<double>();
    r.events_masked = jc.at("events_masked").get<std::size_t>();
    return FittedPropensity(std::move(m), std::move(r), std::move(o));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("propensity model JSON: ") + e.what());
  }
}

void save_propensity(const std::filesystem::path& path, const FittedPropensity& fit) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(fit).dump(2) << "\n";
}

FittedPropensity load_propensity(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return propensity_from_json(j);
}

nlohmann::json to_json(const FitDiagnostics& d) {
  using nlohmann::json;
  auto rows = [](const std::vector<DiagnosticRow>& v) {
    json a = json::array();
    for (const auto& r : v) a.push_back({{"t", r.t}, {"observed", r.observed}, {"expected", r.expected}, {"residual", r.residual}});
    return a;
  };
  return json{{"training_periods", d.training_periods},
              {"in_sample", rows(d.in_sample)},
              {"out_of_sample", rows(d.out_of_sample)},
              {"in_sample_mean_residual", d.in_sample_mean},
              {"in_sample_se", d.in_sample_se},
              {"out_of_sample_mean_residual", d.out_of_sample_mean},
              {"out_of_sample_se", d.out_of_sample_se},
              {"trend_slope", d.trend_slope},
              {"trend_z", d.trend_z},
              {"trend_flagged", d.trend_flagged}};
}

}  // namespace geocausal
