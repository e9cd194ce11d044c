#include "geocausal/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "geocausal/ate.hpp"
#include "geocausal/cate.hpp"
#include "geocausal/errors.hpp"
#include "geocausal/geo_io.hpp"
#include "geocausal/mediation.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"
#include "geocausal/propensity.hpp"
#include "geocausal/simulate.hpp"

namespace geocausal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

Box box_from(const json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw InvalidArgument(std::string(what) + ": box needs [xmin, ymin, xmax, ymax]");
  if (!(v[2] > v[0] && v[3] > v[1])) throw InvalidArgument(std::string(what) + ": empty box");
  return {v[0], v[1], v[2], v[3]};
}

json box_json(const Box& b) { return json{b.xmin, b.ymin, b.xmax, b.ymax}; }

std::optional<MediatorIntervention> mediator_from(const json& j) {
  if (!j.contains("mediator") || j.at("mediator").is_null()) return std::nullopt;
  MediatorIntervention m;
  m.delta = j.at("mediator").at("delta").get<double>();
  m.target_mark = j.at("mediator").at("target_mark").get<std::string>();
  m.validate();
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "unnamed" : out;
}

}  // namespace

std::vector<int> parse_lag_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("lag list: '" + s + "' is not an integer");
    }
    if (used != s.size()) throw InvalidArgument("lag list: '" + s + "' is not an integer");
    if (v < 1) throw InvalidArgument("lag list: L must be >= 1");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty()) continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(to_int(item));
    } else {
      const int lo = to_int(item.substr(0, dots));
      const int hi = to_int(item.substr(dots + 2));
      if (hi < lo) throw InvalidArgument("lag list: empty range " + item);
      for (int l = lo; l <= hi; ++l) out.push_back(l);
    }
  }
  if (out.empty()) throw InvalidArgument("lag list: no values in '" + text + "'");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

RunConfig run_config_from_json(const json& j, const fs::path& base) {
  RunConfig c;
  c.source = j;
  try {
    if (!j.contains("events")) throw InvalidArgument("config: 'events' is required");
    c.events = resolve(base, j.at("events").get<std::string>());
    if (!j.contains("window")) throw InvalidArgument("config: exactly one 'window' is required");
    const auto& w = j.at("window");
    if (w.contains("box") == w.contains("geojson")) {
      throw InvalidArgument("config: window needs exactly one of 'box' or 'geojson'");
    }
    if (w.contains("box")) c.window_box = box_from(w.at("box"), "window");
    if (w.contains("geojson")) c.window_geojson = resolve(base, w.at("geojson").get<std::string>());
    if (j.contains("grid")) {
      c.nx = j.at("grid").value("nx", c.nx);
      c.ny = j.at("grid").value("ny", c.ny);
    }
    if (j.contains("T") && !j.at("T").is_null()) c.T = j.at("T").get<int>();
    c.mark_labels = j.value("marks", std::vector<std::string>{});
    if (j.contains("covariates")) {
      for (auto it = j.at("covariates").begin(); it != j.at("covariates").end(); ++it) {
        c.covariate_rasters[it.key()] = resolve(base, it.value().get<std::string>());
      }
    }
    if (j.contains("features")) {
      for (const auto& f : j.at("features")) {
        FeatureCovariate fc;
        fc.name = f.at("name").get<std::string>();
        fc.geojson = resolve(base, f.at("geojson").get<std::string>());
        fc.kind = f.value("kind", fc.kind);
        fc.decay = f.value("decay", fc.decay);
        if (fc.kind != "points" && fc.kind != "polylines") throw InvalidArgument("config: feature kind must be points or polylines");
        c.features.push_back(fc);
      }
    }
    c.history_lags = j.value("history_lags", std::vector<int>{});
    if (j.contains("propensity")) {
      const auto& p = j.at("propensity");
      c.propensity_covariates = p.value("covariates", std::vector<std::string>{});
      c.time_spline_df = p.value("time_spline_df", 0);
      c.ridge = p.value("ridge", 0.0);
    }
    if (j.contains("smoothing")) {
      const auto& s = j.at("smoothing");
      if (s.contains("bandwidth")) {
        const auto& b = s.at("bandwidth");
        if (b.is_string()) {
          if (b.get<std::string>() != "scott") throw InvalidArgument("config: bandwidth must be a number or \"scott\"");
        } else {
          c.bandwidth = b.get<double>();
          validate(SmoothingSpec{*c.bandwidth, Kernel::gaussian});
        }
      }
      if (s.contains("kernel")) c.kernel = parse_kernel(s.at("kernel").get<std::string>());
    }
    if (j.contains("interventions")) {
      for (const auto& iv : j.at("interventions")) {
        InterventionSpec s;
        s.label = iv.at("label").get<std::string>();
        s.baseline = iv.value("baseline", s.baseline);
        s.count = iv.value("count", s.count);
        if (iv.contains("power")) {
          for (const auto& pc : iv.at("power")) s.power.push_back({pc.at("covariate").get<std::string>(), pc.value("exponent", 1.0)});
        }
        s.mediator = mediator_from(iv);
        for (const auto& o : c.interventions) {
          if (o.label == s.label) throw InvalidArgument("config: duplicate intervention label " + s.label);
        }
        c.interventions.push_back(s);
      }
    }
    if (j.contains("contrasts")) {
      for (const auto& ct : j.at("contrasts")) c.contrasts.emplace_back(ct.at("a").get<std::string>(), ct.at("b").get<std::string>());
    }
    for (const auto& [a, b] : c.contrasts) {
      for (const auto& lab : {a, b}) {
        if (std::none_of(c.interventions.begin(), c.interventions.end(), [&](const auto& s) { return s.label == lab; })) {
          throw InvalidArgument("config: contrast refers to unknown intervention '" + lab + "'");
        }
      }
    }
    if (j.contains("L")) {
      const auto& l = j.at("L");
      if (l.is_string()) c.L = parse_lag_list(l.get<std::string>());
      else if (l.is_number_integer()) c.L = {l.get<int>()};
      else c.L = l.get<std::vector<int>>();
      for (int v : c.L) {
        if (v < 1) throw InvalidArgument("config: L must be >= 1");
      }
    }
    if (j.contains("regions")) {
      for (const auto& r : j.at("regions")) {
        RegionSpec s;
        s.label = r.at("label").get<std::string>();
        if (r.contains("box")) s.box = box_from(r.at("box"), "region");
        if (r.contains("geojson")) s.geojson = resolve(base, r.at("geojson").get<std::string>());
        c.regions.push_back(s);
      }
    }
    if (c.regions.empty()) c.regions.push_back({"window", std::nullopt, std::nullopt});
    if (j.contains("cate")) {
      const auto& k = j.at("cate");
      c.cate.pixel_factor = k.value("pixel_factor", c.cate.pixel_factor);
      c.cate.moderator = k.value("moderator", std::string{});
      if (k.contains("moderator_csv")) c.cate.moderator_csv = resolve(base, k.at("moderator_csv").get<std::string>());
      c.cate.moderator_name = k.value("moderator_name", std::string{});
      c.cate.basis = k.value("basis", c.cate.basis);
      c.cate.spline_df = k.value("spline_df", c.cate.spline_df);
      c.cate.missing = k.value("missing", c.cate.missing);
    }
    if (j.contains("mediator") && !j.at("mediator").is_null()) {
      const auto& m = j.at("mediator");
      MediatorSpec s;
      s.covariates = m.value("covariates", std::vector<std::string>{});
      s.exits = m.at("exits").get<std::vector<std::string>>();
      s.final_mark = m.at("final_mark").get<std::string>();
      s.spline_df = m.value("spline_df", 0);
      s.order = m.value("order", s.order);
      if (s.order != "treatment_first" && s.order != "mediator_first") {
        throw InvalidArgument("config: mediator order must be treatment_first or mediator_first");
      }
      c.mediator = s;
    }
    if (j.contains("truncation_quantile") && !j.at("truncation_quantile").is_null()) {
      c.truncation_quantile = j.at("truncation_quantile").get<double>();
    }
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("out")) c.out = resolve(base, j.at("out").get<std::string>());
    if (c.nx < 1 || c.ny < 1) throw InvalidArgument("config: grid needs nx, ny >= 1");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("cannot parse config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::string config_hash(const json& j) {
  // FNV-1a over the canonical dump (object keys are sorted).
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

json to_json(const RunReport& r) {
  return json{{"command", r.command},
              {"ok", r.ok},
              {"status", r.status},
              {"results", r.results},
              {"diagnostics", r.diagnostics},
              {"provenance", r.provenance}};
}

// ---------------------------------------------------------------------------
// Data loading

namespace {

struct Dataset {
  GridPtr grid;
  PatternSeries series;
  std::vector<Region> regions;
};

GridPtr load_grid(const RunConfig& c) {
  if (c.window_box) return build_grid(SpatialWindow(*c.window_box), c.nx, c.ny);
  const auto polys = read_geojson_polygons(*c.window_geojson);
  if (polys.size() != 1) throw InvalidArgument("window GeoJSON must hold exactly one polygon");
  const Polygon& ring = polys.front();
  Box b{ring.front().x, ring.front().y, ring.front().x, ring.front().y};
  for (const auto& p : ring) {
    b.xmin = std::min(b.xmin, p.x);
    b.ymin = std::min(b.ymin, p.y);
    b.xmax = std::max(b.xmax, p.x);
    b.ymax = std::max(b.ymax, p.y);
  }
  return build_grid(SpatialWindow(b, ring), c.nx, c.ny);
}

CovariatesPtr load_covariates(const RunConfig& c, const GridPtr& grid) {
  auto stack = std::make_shared<CovariateStack>();
  for (const auto& [name, path] : c.covariate_rasters) {
    stack->add(name, std::make_shared<const Raster>(raster_on_grid(read_ascii_grid(path), grid, name)));
  }
  for (const auto& f : c.features) {
    DistanceMap dm;
    if (f.kind == "points") {
      const auto pts = read_geojson_points(f.geojson);
      dm = distance_map(grid, pts);
    } else {
      const auto lines = read_geojson_polylines(f.geojson);
      dm = distance_map(grid, lines);
    }
    stack->add(f.name, std::make_shared<const Raster>(decay_transform(dm, f.decay)));
  }
  return stack;
}

// Adds treatment/outcome history layers to every period's covariate stack.
PatternSeries with_history(const PatternSeries& s, const std::vector<int>& lags) {
  if (lags.empty()) return s;
  std::vector<Period> periods;
  periods.reserve(static_cast<std::size_t>(s.T()));
  for (int t = 1; t <= s.T(); ++t) {
    Period p = s.at(t);
    auto stack = std::make_shared<CovariateStack>(*p.covariates);
    auto h = history_maps(s, t, lags);
    for (std::size_t k = 0; k < h.names.size(); ++k) stack->add(h.names[k], std::make_shared<const Raster>(std::move(h.maps[k])));
    p.covariates = stack;
    periods.push_back(std::move(p));
  }
  return PatternSeries(s.grid(), s.mark_labels(), std::move(periods));
}

Dataset load_dataset(const RunConfig& c) {
  GridPtr grid = load_grid(c);
  const auto stack = load_covariates(c, grid);
  const auto events = read_events_csv(c.events);
  int T = 0;
  for (const auto& e : events) T = std::max(T, e.t);
  if (c.T) T = *c.T;
  if (T < 1) throw InvalidArgument("events file " + c.events.string() + " has no periods");
  PatternSeries series = with_history(build_series(grid, events, T, stack, c.mark_labels), c.history_lags);
  std::vector<Region> regions;
  for (const auto& r : c.regions) {
    if (r.box) {
      regions.push_back(Region::from_box(grid, *r.box, r.label));
    } else if (r.geojson) {
      const auto polys = read_geojson_polygons(*r.geojson);
      if (polys.empty()) throw InvalidArgument("region " + r.label + ": no polygon in " + r.geojson->string());
      Region reg = Region::from_polygon(grid, polys.front(), r.label);
      for (std::size_t k = 1; k < polys.size(); ++k) reg = reg.united(Region::from_polygon(grid, polys[k], r.label));
      regions.push_back(std::move(reg));
    } else {
      regions.push_back(Region::whole(grid, r.label));
    }
  }
  return {grid, std::move(series), std::move(regions)};
}

std::vector<std::string> propensity_names(const RunConfig& c, const PatternSeries& s) {
  if (!c.propensity_covariates.empty()) return c.propensity_covariates;
  return s.at(1).covariates->names;
}

FittedPropensity fit_for(const RunConfig& c, const PatternSeries& s) {
  PropensityOptions opts;
  opts.time_spline_df = c.time_spline_df;
  opts.glm.ridge = c.ridge;
  return fit_poisson_intensity(s, propensity_names(c, s), opts);
}

Raster mean_intensity(const std::vector<std::shared_ptr<const Raster>>& lam) {
  const GridPtr& g = lam.front()->grid();
  std::vector<double> out(g->size(), 0.0);
  std::vector<double> col(lam.size());
  for (std::size_t c = 0; c < g->size(); ++c) {
    for (std::size_t t = 0; t < lam.size(); ++t) col[t] = std::isnan((*lam[t])[c]) ? 0.0 : (*lam[t])[c];
    out[c] = pairwise_sum(col) / static_cast<double>(lam.size());
  }
  return Raster(g, std::move(out));
}

struct Designed {
  std::map<std::string, TreatmentIntervention> treatment;
  std::map<std::string, const InterventionSpec*> spec;
};

Designed design(const RunConfig& c, const Dataset& d, const Raster& fitted_mean) {
  Designed out;
  for (const auto& s : c.interventions) {
    Raster baseline;
    if (s.baseline == "propensity") {
      baseline = normalize_raster(fitted_mean);
    } else if (s.baseline == "uniform") {
      std::vector<double> v(d.grid->size());
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = d.grid->active(k) ? 1.0 : 0.0;
      baseline = normalize_raster(Raster(d.grid, std::move(v)));
    } else {
      const Raster* layer = d.series.at(1).covariates->find(s.baseline);
      if (!layer) throw InvalidArgument("intervention " + s.label + ": unknown baseline '" + s.baseline + "'");
      baseline = normalize_raster(*layer);
    }
    TreatmentIntervention tr;
    if (s.power.empty()) {
      tr = intensified(baseline, s.count);
    } else {
      PowerDensitySpec ps;
      for (const auto& pc : s.power) {
        const Raster* layer = d.series.at(1).covariates->find(pc.covariate);
        if (!layer) throw InvalidArgument("intervention " + s.label + ": unknown covariate '" + pc.covariate + "'");
        ps.components.push_back(*layer);
        ps.exponents.push_back(pc.exponent);
      }
      tr = location_shift(baseline, power_density(ps, d.grid), s.count);
    }
    out.treatment.emplace(s.label, std::move(tr));
    out.spec.emplace(s.label, &s);
  }
  return out;
}

InterventionPair pair_for(const Designed& d, const std::string& label, int L) {
  return make_pair_intervention(d.treatment.at(label), L, d.spec.at(label)->mediator, label);
}

SmoothingSpec smoothing_for(const RunConfig& c, const PatternSeries& s) {
  SmoothingSpec spec;
  spec.kernel = c.kernel;
  spec.bandwidth = c.bandwidth ? *c.bandwidth : scott_bandwidth(s);
  validate(spec);
  return spec;
}

json weight_summary(const WeightSeries& w) {
  std::vector<double> v = w.weights;
  std::sort(v.begin(), v.end());
  const double mean = pairwise_sum(w.weights) / static_cast<double>(w.weights.size());
  return json{{"L", w.L},
              {"periods", w.weights.size()},
              {"mean", mean},
              {"min", v.front()},
              {"q50", sorted_quantile(v, 0.5)},
              {"q90", sorted_quantile(v, 0.9)},
              {"q99", sorted_quantile(v, 0.99)},
              {"max", v.back()},
              {"ess", w.ess},
              {"truncated", w.truncated_count}};
}

std::string describe_error(const char* module, const std::exception& e) {
  std::ostringstream o;
  o << module << ": ";
  if (const auto* ov = dynamic_cast<const OverlapViolation*>(&e)) {
    o << "overlap violation at period " << ov->period() << " near (" << ov->x() << ", " << ov->y() << "): ";
  }
  o << e.what();
  return o.str();
}

void add_status(RunReport& r, const std::string& id, bool ok, const std::string& message = {}) {
  r.status.push_back(json{{"id", id}, {"ok", ok}, {"message", message}});
  if (!ok) r.ok = false;
}

json provenance(const RunConfig& c, const std::string& command) {
  return json{{"tool", "geocausal"},
              {"version", kVersion},
              {"command", command},
              {"seed", c.seed},
              {"config_hash", config_hash(c.source)},
              {"libraries", {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                           std::to_string(EIGEN_MINOR_VERSION)},
                             {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
}

std::string contrast_id(const std::string& a, const std::string& b) { return a + "_vs_" + b; }

WeightOptions weight_options(const RunConfig& c) {
  WeightOptions w;
  w.truncation_quantile = c.truncation_quantile;
  return w;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_fit_propensity(const RunConfig& c, const Dataset& d, RunReport& r) {
  const auto fit = fit_for(c, d.series);
  r.results["propensity"] = to_json(fit);
  save_propensity(c.out / "propensity.json", fit);
  write_ascii_grid(c.out / "propensity_mean.asc", mean_intensity(predict_series(fit, d.series)));
  add_status(r, "propensity", true);
  try {
    r.diagnostics["fit"] = to_json(fit_diagnostics(fit, d.series, propensity_names(c, d.series)));
    add_status(r, "propensity/diagnostics", true);
  } catch (const std::exception& e) {
    add_status(r, "propensity/diagnostics", false, describe_error("propensity", e));
  }
}

void cmd_design(const RunConfig& c, const Dataset& d, RunReport& r) {
  const auto fit = fit_for(c, d.series);
  const Designed des = design(c, d, mean_intensity(predict_series(fit, d.series)));
  json list = json::array();
  for (const auto& s : c.interventions) {
    const auto& tr = des.treatment.at(s.label);
    const fs::path file = "intervention_" + safe_name(s.label) + ".asc";
    write_ascii_grid(c.out / file, tr.intensity());
    json item{{"label", s.label}, {"expected_count", tr.expected_count()}, {"baseline", s.baseline}, {"surface", file.string()}};
    if (s.mediator) item["mediator"] = {{"delta", s.mediator->delta}, {"target_mark", s.mediator->target_mark}};
    list.push_back(item);
    add_status(r, "intervention/" + s.label, true);
  }
  r.results["interventions"] = list;
}

void cmd_ate(const RunConfig& c, const Dataset& d, RunReport& r) {
  if (c.contrasts.empty()) throw InvalidArgument("ate: config lists no contrasts");
  const auto fit = fit_for(c, d.series);
  const auto lam = predict_series(fit, d.series);
  const auto log_e = propensity_log_densities(d.series, lam);
  const Designed des = design(c, d, mean_intensity(lam));
  const SmoothingSpec spec = smoothing_for(c, d.series);
  std::vector<std::vector<double>> outcomes;
  for (const auto& reg : d.regions) outcomes.push_back(outcome_integrals(d.series, spec, reg));
  r.diagnostics["propensity"] = to_json(fit).at("convergence");
  r.diagnostics["bandwidth"] = spec.bandwidth;
  json weights = json::object();
  json effects = json::array();
  for (const auto& [a, b] : c.contrasts) {
    for (int L : c.L) {
      const std::string id = "ate/" + contrast_id(a, b) + "/L=" + std::to_string(L);
      try {
        if (L > d.series.T()) throw InvalidArgument("L = " + std::to_string(L) + " exceeds T = " + std::to_string(d.series.T()));
        const auto wa = compute_weight_series(d.series, log_e, pair_for(des, a, L), weight_options(c));
        const auto wb = compute_weight_series(d.series, log_e, pair_for(des, b, L), weight_options(c));
        weights[a + "/L=" + std::to_string(L)] = weight_summary(wa);
        weights[b + "/L=" + std::to_string(L)] = weight_summary(wb);
        for (std::size_t k = 0; k < d.regions.size(); ++k) {
          EffectEstimate e = contrast(wa, wb, outcomes[k]);
          e.region = d.regions[k].label();
          e.label_a = a;
          e.label_b = b;
          effects.push_back(to_json(e));
        }
        const Raster sa = weighted_mean_surface(d.series, wa, spec, EstimatorMode::hajek);
        const Raster sb = weighted_mean_surface(d.series, wb, spec, EstimatorMode::hajek);
        std::vector<double> diff(sa.size());
        for (std::size_t q = 0; q < diff.size(); ++q) diff[q] = sa[q] - sb[q];
        write_ascii_grid(c.out / ("surface_" + safe_name(contrast_id(a, b)) + "_L" + std::to_string(L) + ".asc"),
                         Raster(d.grid, std::move(diff)));
        add_status(r, id, true);
      } catch (const std::exception& e) {
        add_status(r, id, false, describe_error("ate", e));
      }
    }
  }
  r.results["estimand"] = "ate";
  r.results["effects"] = effects;
  r.diagnostics["weights"] = weights;
}

void cmd_cate(const RunConfig& c, const Dataset& d, RunReport& r) {
  if (c.contrasts.empty()) throw InvalidArgument("cate: config lists no contrasts");
  const auto fit = fit_for(c, d.series);
  const auto lam = predict_series(fit, d.series);
  const auto log_e = propensity_log_densities(d.series, lam);
  const Designed des = design(c, d, mean_intensity(lam));
  const SmoothingSpec spec = smoothing_for(c, d.series);
  const PixelPartition part = PixelPartition::blocks(d.grid, c.cate.pixel_factor);

  ModeratorPanel panel;
  if (!c.cate.moderator_csv.empty()) {
    auto panels = read_moderators_csv(c.cate.moderator_csv, part, d.series.T());
    const auto it = panels.find(c.cate.moderator_name);
    if (it == panels.end()) throw InvalidArgument("cate: moderator '" + c.cate.moderator_name + "' not in " + c.cate.moderator_csv.string());
    panel = it->second;
  } else {
    if (c.cate.moderator.empty()) throw InvalidArgument("cate: config needs a moderator");
    const Raster* layer = d.series.at(1).covariates->find(c.cate.moderator);
    if (!layer) throw InvalidArgument("cate: unknown moderator covariate '" + c.cate.moderator + "'");
    panel = static_moderator(c.cate.moderator, part.pixel_means(*layer), d.series.T());
  }
  ModeratorBasis basis = ModeratorBasis::linear();
  std::vector<double> finite;
  for (const auto& row : panel.values) {
    for (double v : row) {
      if (std::isfinite(v)) finite.push_back(v);
    }
  }
  if (finite.empty()) throw InvalidArgument("cate: moderator has no finite values");
  if (c.cate.basis == "intercept") {
    basis = ModeratorBasis::intercept_only();
  } else if (c.cate.basis == "spline") {
    basis = ModeratorBasis::spline(NaturalCubicBasis::from_values(finite, c.cate.spline_df));
  } else if (c.cate.basis == "levels") {
    basis = ModeratorBasis::levels(finite);
  } else if (c.cate.basis != "linear") {
    throw InvalidArgument("cate: basis must be intercept, linear, spline or levels");
  }
  CateOptions opts;
  if (c.cate.missing == "zero") opts.missing = MissingModerator::zero;
  else if (c.cate.missing != "exclude") throw InvalidArgument("cate: missing must be exclude or zero");

  std::sort(finite.begin(), finite.end());
  std::vector<double> grid_r;
  if (c.cate.basis == "levels") {
    // categorical: the curve is just the value at each level
    grid_r = finite;
    grid_r.erase(std::unique(grid_r.begin(), grid_r.end()), grid_r.end());
  } else {
    for (int q = 0; q <= 10; ++q) grid_r.push_back(sorted_quantile(finite, 0.05 + 0.09 * q));
  }

  json items = json::array();
  for (const auto& [a, b] : c.contrasts) {
    for (int L : c.L) {
      const std::string id = "cate/" + contrast_id(a, b) + "/L=" + std::to_string(L);
      try {
        if (L > d.series.T()) throw InvalidArgument("L = " + std::to_string(L) + " exceeds T = " + std::to_string(d.series.T()));
        const auto wa = compute_weight_series(d.series, log_e, pair_for(des, a, L), weight_options(c));
        const auto wb = compute_weight_series(d.series, log_e, pair_for(des, b, L), weight_options(c));
        for (EstimatorMode mode : {EstimatorMode::ipw, EstimatorMode::hajek}) {
          opts.mode = mode;
          const auto proj = estimate_cate(d.series, wa, wb, spec, part, panel, basis, opts);
          json j = to_json(proj);
          j["intervention_a"] = a;
          j["intervention_b"] = b;
          j["moderator"] = panel.name;
          j["mode"] = mode == EstimatorMode::ipw ? "ipw" : "hajek";
          json curve = json::array();
          for (double rv : grid_r) {
            const CateValue v = proj.evaluate(basis, rv);
            curve.push_back({{"r", rv}, {"value", v.value}, {"ci90", {v.ci90.lo, v.ci90.hi}}, {"ci95", {v.ci95.lo, v.ci95.hi}}});
          }
          j["curve"] = curve;
          items.push_back(j);
        }
        add_status(r, id, true);
      } catch (const std::exception& e) {
        add_status(r, id, false, describe_error("cate", e));
      }
    }
  }
  r.results["estimand"] = "cate";
  r.results["projections"] = items;
  r.diagnostics["bandwidth"] = spec.bandwidth;
  r.diagnostics["pixels"] = part.size();
}

void cmd_mediate(const RunConfig& c, const Dataset& d, RunReport& r) {
  if (!c.mediator) throw InvalidArgument("mediate: config has no 'mediator' section");
  if (c.contrasts.empty()) throw InvalidArgument("mediate: config lists no contrasts");
  const auto fit = fit_for(c, d.series);
  const auto lam = predict_series(fit, d.series);
  const Designed des = design(c, d, mean_intensity(lam));
  const SmoothingSpec spec = smoothing_for(c, d.series);
  MediatorFitOptions mopts;
  mopts.spline_df = c.mediator->spline_df;
  const MediatorScoreModel model =
      fit_mediator_score(d.series, c.mediator->covariates, MediatorTree{c.mediator->exits, c.mediator->final_mark}, mopts);
  r.diagnostics["mediator_model"] = to_json(model);
  const DecompositionOrder order =
      c.mediator->order == "mediator_first" ? DecompositionOrder::mediator_first : DecompositionOrder::treatment_first;
  json items = json::array();
  for (const auto& [a, b] : c.contrasts) {
    for (int L : c.L) {
      const std::string id = "mediate/" + contrast_id(a, b) + "/L=" + std::to_string(L);
      try {
        if (L > d.series.T()) throw InvalidArgument("L = " + std::to_string(L) + " exceeds T = " + std::to_string(d.series.T()));
        for (const auto& reg : d.regions) {
          const auto m = estimate_mediation_effects(d.series, fit, model, pair_for(des, a, L), pair_for(des, b, L), spec, reg,
                                                    order, weight_options(c));
          items.push_back(to_json(m));
        }
        add_status(r, id, true);
      } catch (const std::exception& e) {
        add_status(r, id, false, describe_error("mediation", e));
      }
    }
  }
  r.results["estimand"] = "mediate";
  r.results["effects"] = items;
  r.diagnostics["bandwidth"] = spec.bandwidth;
}

void write_report(const fs::path& out, const json& report) {
  write_text(out / "results.json", report.dump(2) + "\n");
  for (const auto& [name, svg] : render_figures(report.at("results"))) write_text(out / name, svg);
}

}  // namespace

RunReport run(const RunConfig& c, const std::string& command) {
  RunReport r;
  r.command = command;
  r.provenance = provenance(c, command);
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw IoError("cannot create output directory " + c.out.string() + ": " + ec.message());
  const Dataset d = load_dataset(c);
  const char* module = command == "ate" ? "ate" : command == "cate" ? "cate" : command == "mediate" ? "mediation"
                     : command == "design-intervention" ? "interventions" : "propensity";
  try {
    if (command == "fit-propensity") cmd_fit_propensity(c, d, r);
    else if (command == "design-intervention") cmd_design(c, d, r);
    else if (command == "ate") cmd_ate(c, d, r);
    else if (command == "cate") cmd_cate(c, d, r);
    else if (command == "mediate") cmd_mediate(c, d, r);
    else throw InvalidArgument("unknown command '" + command + "'");
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    add_status(r, command, false, describe_error(module, e));
  }
  write_report(c.out, to_json(r));
  return r;
}

// ---------------------------------------------------------------------------
// Figures

namespace {

struct Bar {
  double x = 0.0;
  double value = 0.0;
  Interval ci90, ci95;
};

struct Series {
  std::string name;
  std::string color;
  std::vector<Bar> bars;
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::vector<Series> series;
};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '&') o += "&amp;";
    else if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

std::string num(double v) {
  std::ostringstream o;
  o << std::setprecision(4) << v;
  return o.str();
}

// Effect panels side by side: thick bars are 95% intervals, thin bars 90%.
std::string render_panels(const std::string& title, const std::vector<Panel>& panels) {
  const double pw = 320, ph = 240, ml = 60, mt = 50, gap = 30;
  const double W = ml + panels.size() * (pw + gap) + 20, H = mt + ph + 70;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << ml << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& P = panels[p];
    double xmin = 1e300, xmax = -1e300, ymin = 0.0, ymax = 0.0;
    for (const auto& se : P.series) {
      for (const auto& b : se.bars) {
        xmin = std::min(xmin, b.x);
        xmax = std::max(xmax, b.x);
        for (double v : {b.value, b.ci95.lo, b.ci95.hi, b.ci90.lo, b.ci90.hi}) {
          if (std::isfinite(v)) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
          }
        }
      }
    }
    if (xmin > xmax) xmin = 0, xmax = 1;
    if (xmax == xmin) xmin -= 1, xmax += 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad, ymax += pad;
    const double x0 = ml + p * (pw + gap), y0 = mt;
    auto X = [&](double v) { return x0 + 20 + (v - xmin) / (xmax - xmin) * (pw - 40); };
    auto Y = [&](double v) { return y0 + ph - (v - ymin) / (ymax - ymin) * ph; };
    s << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    s << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\">" << esc(P.title) << "</text>\n";
    s << "<line x1=\"" << x0 << "\" x2=\"" << x0 + pw << "\" y1=\"" << Y(0) << "\" y2=\"" << Y(0)
      << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = ymin + k * (ymax - ymin) / 4;
      s << "<text x=\"" << x0 - 5 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    }
    std::set<double> ticks;
    for (const auto& se : P.series) {
      for (const auto& b : se.bars) ticks.insert(b.x);
    }
    const std::size_t every = std::max<std::size_t>(1, ticks.size() / 12);
    std::size_t q = 0;
    for (double t : ticks) {
      if (q++ % every == 0) s << "<text x=\"" << X(t) << "\" y=\"" << y0 + ph + 14 << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
    }
    s << "<text x=\"" << x0 + pw / 2 << "\" y=\"" << y0 + ph + 32 << "\" text-anchor=\"middle\">" << esc(P.xlabel) << "</text>\n";
    const double spread = P.series.size() > 1 ? std::min(12.0, (pw - 40) / (3.0 * std::max<std::size_t>(1, ticks.size()))) : 0.0;
    for (std::size_t k = 0; k < P.series.size(); ++k) {
      const Series& se = P.series[k];
      const double off = (static_cast<double>(k) - 0.5 * static_cast<double>(P.series.size() - 1)) * spread;
      for (const auto& b : se.bars) {
        const double x = X(b.x) + off;
        s << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << Y(b.ci95.lo) << "\" y2=\"" << Y(b.ci95.hi)
          << "\" stroke=\"" << se.color << "\" stroke-width=\"3.5\"/>\n";
        s << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << Y(b.ci90.lo) << "\" y2=\"" << Y(b.ci90.hi)
          << "\" stroke=\"" << se.color << "\" stroke-width=\"1\"/>\n";
        s << "<circle cx=\"" << x << "\" cy=\"" << Y(b.value) << "\" r=\"3\" fill=\"" << se.color << "\"/>\n";
      }
      s << "<text x=\"" << x0 + 8 << "\" y=\"" << y0 + 14 + 13 * k << "\" fill=\"" << se.color << "\">" << esc(se.name) << "</text>\n";
    }
    s << "</g>\n";
  }
  s << "<text x=\"" << ml << "\" y=\"" << H - 10 << "\" fill=\"#555\">thick: 95% interval, thin: 90% interval</text>\n";
  s << "</svg>\n";
  return s.str();
}

Interval iv_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

Bar bar_from_effect(const json& e, const char* est) {
  return {static_cast<double>(e.at("L").get<int>()), e.at(est).get<double>(), iv_from(e.at("ci90").at(est)),
          iv_from(e.at("ci95").at(est))};
}

}  // namespace

std::map<std::string, std::string> render_figures(const json& results) {
  std::map<std::string, std::string> out;
  if (!results.contains("estimand")) return out;
  const std::string est = results.at("estimand").get<std::string>();
  if (est == "ate") {
    // One figure per contrast, one panel per region, effect against L.
    std::map<std::string, std::map<std::string, Panel>> figs;
    for (const auto& e : results.at("effects")) {
      const std::string cid = contrast_id(e.at("intervention_a").get<std::string>(), e.at("intervention_b").get<std::string>());
      const std::string reg = e.at("region").get<std::string>();
      Panel& P = figs[cid][reg];
      if (P.series.empty()) {
        P.title = "region " + reg;
        P.xlabel = "L (periods)";
        P.series = {{"IPW", "#1f5fa8", {}}, {"Hajek", "#c2410c", {}}};
      }
      P.series[0].bars.push_back(bar_from_effect(e, "ipw"));
      P.series[1].bars.push_back(bar_from_effect(e, "hajek"));
    }
    for (auto& [cid, panels] : figs) {
      std::vector<Panel> v;
      for (auto& [_, p] : panels) v.push_back(p);
      out["ate_" + safe_name(cid) + ".svg"] = render_panels("Effect " + cid + " by lag", v);
    }
  } else if (est == "mediate") {
    std::map<std::string, std::map<std::string, Panel>> figs;
    for (const auto& m : results.at("effects")) {
      const auto& tot = m.at("total");
      const std::string cid = contrast_id(tot.at("intervention_a").get<std::string>(), tot.at("intervention_b").get<std::string>());
      const std::string reg = tot.at("region").get<std::string>();
      Panel& P = figs[cid][reg];
      if (P.series.empty()) {
        P.title = "region " + reg + " (Hajek)";
        P.xlabel = "L (periods)";
        P.series = {{"total", "#111827", {}}, {"direct", "#1f5fa8", {}}, {"indirect", "#c2410c", {}}};
      }
      P.series[0].bars.push_back(bar_from_effect(m.at("total"), "hajek"));
      P.series[1].bars.push_back(bar_from_effect(m.at("direct"), "hajek"));
      P.series[2].bars.push_back(bar_from_effect(m.at("indirect"), "hajek"));
    }
    for (auto& [cid, panels] : figs) {
      std::vector<Panel> v;
      for (auto& [_, p] : panels) v.push_back(p);
      out["mediation_" + safe_name(cid) + ".svg"] = render_panels("Total, direct and indirect effects " + cid, v);
    }
  } else if (est == "cate") {
    for (const auto& p : results.at("projections")) {
      const std::string cid = contrast_id(p.at("intervention_a").get<std::string>(), p.at("intervention_b").get<std::string>());
      const std::string mode = p.at("mode").get<std::string>();
      Panel P;
      P.title = "L = " + std::to_string(p.at("L").get<int>()) + " (" + mode + ")";
      P.xlabel = "moderator " + p.at("moderator").get<std::string>();
      P.series = {{"CATE", "#1f5fa8", {}}};
      for (const auto& c : p.at("curve")) {
        P.series[0].bars.push_back({c.at("r").get<double>(), c.at("value").get<double>(), iv_from(c.at("ci90")), iv_from(c.at("ci95"))});
      }
      out["cate_" + safe_name(cid) + "_L" + std::to_string(p.at("L").get<int>()) + "_" + mode + ".svg"] =
          render_panels("Heterogeneous effect " + cid, {P});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out;
  std::string L;
};

void add_common(CLI::App* sub, CommonOpts& o, bool needs_config) {
  auto* opt = sub->add_option("--config", o.config, "run configuration (JSON)");
  if (needs_config) opt->required();
  sub->add_option("--seed", o.seed, "top-level random seed");
  sub->add_option("--threads", o.threads, "worker threads (default: GEOCAUSAL_THREADS or 1)")->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "output directory");
}

int write_json_report(const fs::path& out, const json& report) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  write_text(out / "results.json", report.dump(2) + "\n");
  return 0;
}

int cmd_simulate(const CommonOpts& o, const std::string& dgp_path, int T) {
  const SyntheticDGP dgp = dgp_path.empty() ? default_dgp() : load_dgp(dgp_path);
  const std::uint64_t seed = o.seed.value_or(1);
  const fs::path out = o.out.empty() ? fs::path("simulated") : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string());
  const DgpModel model(dgp);
  const PatternSeries s = simulate_series(model, T, seed);
  write_events_csv(out / "events.csv", s);
  json covs = json::object();
  for (std::size_t k = 0; k < model.covariates()->names.size(); ++k) {
    const std::string& n = model.covariates()->names[k];
    write_ascii_grid(out / (safe_name(n) + ".asc"), *model.covariates()->layers[k]);
    covs[n] = safe_name(n) + ".asc";
  }
  write_text(out / "dgp.json", to_json(dgp).dump(2) + "\n");
  const Box& w = dgp.window;
  const Box centre{w.xmin + 0.25 * w.width(), w.ymin + 0.25 * w.height(), w.xmax - 0.25 * w.width(), w.ymax - 0.25 * w.height()};
  json cfg{{"events", "events.csv"},
           {"window", {{"box", box_json(w)}}},
           {"grid", {{"nx", dgp.nx}, {"ny", dgp.ny}}},
           {"T", T},
           {"covariates", covs},
           {"propensity", {{"covariates", model.covariate_names()}}},
           {"smoothing", {{"bandwidth", "scott"}, {"kernel", "gaussian"}}},
           {"interventions",
            json::array({{{"label", "high"}, {"baseline", "propensity"}, {"count", 2.0 * model.propensity().expected_count()}},
                         {{"label", "low"}, {"baseline", "propensity"}, {"count", model.propensity().expected_count()}}})},
           {"contrasts", json::array({{{"a", "high"}, {"b", "low"}}})},
           {"L", json::array({1, 2, 3})},
           {"regions", json::array({{{"label", "window"}}, {{"label", "centre"}, {"box", box_json(centre)}}})},
           {"seed", seed},
           {"out", "results"}};
  if (dgp.history_coef != 0.0) cfg["history_lags"] = json::array({1});
  if (dgp.mediator) {
    cfg["marks"] = dgp.mediator->labels;
    cfg["mediator"] = {{"covariates", dgp.mediator->covariates},
                       {"exits", dgp.mediator->tree.exits},
                       {"final_mark", dgp.mediator->tree.final_mark}};
    cfg["interventions"][0]["mediator"] = {{"delta", 2.0}, {"target_mark", dgp.mediator->tree.final_mark}};
  }
  if (!dgp.effect_modifier.empty()) cfg["cate"] = {{"moderator", dgp.effect_modifier}, {"pixel_factor", 4}};
  write_text(out / "config.json", cfg.dump(2) + "\n");
  double nw = 0, ny = 0;
  for (int t = 1; t <= T; ++t) {
    nw += static_cast<double>(s.at(t).treatment.size());
    ny += static_cast<double>(s.at(t).outcome.size());
  }
  json report{{"command", "simulate"},
              {"ok", true},
              {"status", json::array({{{"id", "simulate"}, {"ok", true}, {"message", ""}}})},
              {"results", {{"T", T}, {"treatment_events", nw}, {"outcome_events", ny}, {"files", {"events.csv", "config.json", "dgp.json"}}}},
              {"diagnostics", json::object()},
              {"provenance", {{"tool", "geocausal"}, {"version", kVersion}, {"command", "simulate"}, {"seed", seed},
                              {"config_hash", config_hash(to_json(dgp))}}}};
  return write_json_report(out, report);
}

int cmd_validate(const CommonOpts& o, const std::string& dgp_path, const std::string& exp_path, std::optional<int> replicates) {
  const SyntheticDGP dgp = dgp_path.empty() ? default_dgp() : load_dgp(dgp_path);
  ExperimentConfig ec;
  if (!exp_path.empty()) {
    std::ifstream in(exp_path);
    if (!in) throw IoError("cannot open experiment file " + exp_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw IoError("cannot parse experiment file " + exp_path + ": " + e.what());
    }
    ec = experiment_from_json(j);
  }
  if (replicates) ec.replicates = *replicates;
  const std::uint64_t seed = o.seed.value_or(1);
  const fs::path out = o.out.empty() ? fs::path("validation") : fs::path(o.out);
  const CoverageTable table = coverage_experiment(dgp, ec, seed);
  std::error_code err;
  fs::create_directories(out, err);
  write_text(out / "coverage.csv", to_csv(table));
  write_text(out / "coverage.json", to_json(table).dump(2) + "\n");
  json report{{"command", "validate"},
              {"ok", true},
              {"status", json::array({{{"id", "validate"}, {"ok", true}, {"message", ""}}})},
              {"results", {{"coverage", to_json(table)}, {"experiment", to_json(ec)}, {"dgp", to_json(dgp)}}},
              {"diagnostics", json::object()},
              {"provenance", {{"tool", "geocausal"}, {"version", kVersion}, {"command", "validate"}, {"seed", seed},
                              {"config_hash", config_hash(to_json(ec))}}}};
  return write_json_report(out, report);
}

int cmd_report(const CommonOpts& o, const std::string& input) {
  fs::path in = input.empty() ? fs::path(o.out.empty() ? "out" : o.out) / "results.json" : fs::path(input);
  std::ifstream f(in);
  if (!f) throw IoError("cannot open results file " + in.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("cannot parse results file " + in.string() + ": " + e.what());
  }
  const fs::path out = o.out.empty() ? in.parent_path() : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  const auto figs = render_figures(j.at("results"));
  for (const auto& [name, svg] : figs) write_text(out / name, svg);
  std::cout << "wrote " << figs.size() << " figure(s) to " << out.string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Causal effects of spatiotemporal point-pattern treatments"};
  app.require_subcommand(1);
  CommonOpts o;
  std::string dgp_path, exp_path, input;
  int sim_T = 2000;
  std::optional<int> replicates;
  const std::vector<std::pair<std::string, std::string>> analysis = {
      {"fit-propensity", "fit the treatment intensity model"},
      {"design-intervention", "build and export intervention intensities"},
      {"ate", "average effects of intervention contrasts"},
      {"cate", "heterogeneous effects projected on a moderator"},
      {"mediate", "total, direct and indirect effects"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : analysis) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, o, true);
    if (name == "ate" || name == "cate" || name == "mediate") sub->add_option("--L", o.L, "lags, e.g. 3, 1..14 or 1,2,5");
    subs[name] = sub;
  }
  auto* sim = app.add_subcommand("simulate", "generate a synthetic data set with a ready-to-run config");
  add_common(sim, o, false);
  sim->add_option("--dgp", dgp_path, "DGP specification (JSON); default built in");
  sim->add_option("--T", sim_T, "number of periods")->check(CLI::PositiveNumber);
  auto* val = app.add_subcommand("validate", "coverage experiment against the simulation oracle");
  add_common(val, o, false);
  val->add_option("--dgp", dgp_path, "DGP specification (JSON)");
  val->add_option("--experiment", exp_path, "experiment configuration (JSON)");
  val->add_option("--replicates", replicates, "number of replicates")->check(CLI::Range(50, 1000000));
  auto* rep = app.add_subcommand("report", "render SVG figures from a results.json");
  add_common(rep, o, false);
  rep->add_option("--input", input, "results.json to render");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() != 0 ? e.get_exit_code() : 1;
  }

  if (o.threads) set_thread_count(*o.threads);
  try {
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      RunConfig c = load_run_config(o.config);
      if (o.seed) c.seed = *o.seed;
      if (!o.out.empty()) c.out = o.out;
      if (!o.L.empty()) c.L = parse_lag_list(o.L);
      const RunReport r = run(c, name);
      for (const auto& s : r.status) {
        if (!s.at("ok").get<bool>()) std::cerr << s.at("id").get<std::string>() << ": " << s.at("message").get<std::string>() << "\n";
      }
      std::cout << name << ": " << (r.ok ? "ok" : "FAILED (see status in results.json)") << ", output in " << c.out.string() << "\n";
      return r.ok ? 0 : 1;
    }
    if (sim->parsed()) return cmd_simulate(o, dgp_path, sim_T);
    if (val->parsed()) return cmd_validate(o, dgp_path, exp_path, replicates);
    if (rep->parsed()) return cmd_report(o, input);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace geocausal
