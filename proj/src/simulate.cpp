#include "geocausal/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "geocausal/errors.hpp"
#include "geocausal/numeric.hpp"
#include "geocausal/parallel.hpp"
#include "geocausal/propensity.hpp"
#include "geocausal/regression.hpp"
#include "geocausal/rng.hpp"

namespace geocausal {

namespace {

constexpr std::uint64_t kTreatStream = 0x7472656174ULL;
constexpr std::uint64_t kOracleStream = 0x6f7261636cULL;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double covariate_value(const SyntheticCovariate& c, const Box& w, Point p) {
  if (c.type == "constant") return c.value;
  if (c.type == "gradient_x") return c.value + c.slope * (p.x - w.xmin);
  if (c.type == "gradient_y") return c.value + c.slope * (p.y - w.ymin);
  if (c.type == "bump") {
    const double dx = p.x - c.center.x, dy = p.y - c.center.y;
    return c.height * std::exp(-(dx * dx + dy * dy) / (2.0 * c.sd * c.sd));
  }
  if (c.type == "checker") {
    const auto a = static_cast<long>(std::floor((p.x - w.xmin) / c.size));
    const auto b = static_cast<long>(std::floor((p.y - w.ymin) / c.size));
    return ((a + b) % 2 == 0) ? c.height : -c.height;
  }
  throw InvalidArgument("synthetic covariate '" + c.name + "': unknown type '" + c.type + "'");
}

const SyntheticCovariate* find_covariate(const SyntheticDGP& d, const std::string& name) {
  for (const auto& c : d.covariates) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace

void SyntheticDGP::validate() const {
  if (!(window.width() > 0.0 && window.height() > 0.0)) throw InvalidArgument("dgp: empty window");
  if (nx < 1 || ny < 1) throw InvalidArgument("dgp: grid needs nx, ny >= 1");
  for (std::size_t a = 0; a < covariates.size(); ++a) {
    if (covariates[a].name.empty()) throw InvalidArgument("dgp: covariate without a name");
    for (std::size_t b = 0; b < a; ++b) {
      if (covariates[a].name == covariates[b].name) throw InvalidArgument("dgp: duplicate covariate " + covariates[a].name);
    }
  }
  auto check_terms = [&](const std::vector<std::pair<std::string, double>>& terms, const char* what) {
    for (const auto& [n, v] : terms) {
      if (!find_covariate(*this, n)) throw InvalidArgument(std::string("dgp ") + what + ": unknown covariate " + n);
      if (!std::isfinite(v)) throw InvalidArgument(std::string("dgp ") + what + ": non-finite coefficient");
    }
  };
  check_terms(propensity_coefficients, "propensity");
  check_terms(outcome_coefficients, "outcome");
  if (!std::isfinite(propensity_intercept) || !std::isfinite(outcome_intercept) || !std::isfinite(history_coef)) {
    throw InvalidArgument("dgp: non-finite intercept");
  }
  for (double c : carryover) {
    if (!std::isfinite(c) || c < 0.0) throw InvalidArgument("dgp: carryover coefficients must be finite and >= 0");
  }
  if (!std::isfinite(spillover_range) || spillover_range < 0.0) throw InvalidArgument("dgp: spillover range must be >= 0");
  if (!std::isfinite(mediator_bonus) || mediator_bonus < 0.0) throw InvalidArgument("dgp: mediator bonus must be >= 0");
  if (!effect_modifier.empty() && !find_covariate(*this, effect_modifier)) {
    throw InvalidArgument("dgp: unknown effect modifier " + effect_modifier);
  }
  if (mediator) {
    const auto& m = *mediator;
    if (m.stages.size() != m.tree.exits.size()) throw InvalidArgument("dgp mediator: one stage per tree exit");
    for (const auto& s : m.stages) {
      if (s.size() != m.covariates.size() + 1) throw InvalidArgument("dgp mediator: stage needs intercept + one coef per covariate");
    }
    for (const auto& n : m.covariates) {
      if (!find_covariate(*this, n)) throw InvalidArgument("dgp mediator: unknown covariate " + n);
    }
    if (!bonus_mark.empty() && std::find(m.labels.begin(), m.labels.end(), bonus_mark) == m.labels.end()) {
      throw InvalidArgument("dgp: bonus mark '" + bonus_mark + "' is not a mediator label");
    }
  } else if (mediator_bonus > 0.0) {
    throw InvalidArgument("dgp: mediator bonus without a mediator");
  }
}

SyntheticDGP default_dgp() {
  SyntheticDGP d;
  SyntheticCovariate elev;
  elev.name = "elevation";
  elev.type = "gradient_x";
  elev.value = -1.0;
  elev.slope = 1.0 / 16.0;
  SyntheticCovariate urban;
  urban.name = "urban";
  urban.type = "bump";
  urban.height = 1.0;
  urban.center = {20.0, 12.0};
  urban.sd = 6.0;
  d.covariates = {elev, urban};
  // About 1.5 treatment events and 2 baseline outcome events per period.
  d.propensity_intercept = -6.8;
  d.propensity_coefficients = {{"elevation", 0.6}, {"urban", 1.0}};
  d.outcome_intercept = -6.3;
  d.outcome_coefficients = {{"elevation", -0.4}, {"urban", 0.6}};
  d.carryover = {0.0, 0.6, 0.4};
  d.spillover_range = 1.5;
  return d;
}

namespace {

nlohmann::json terms_json(const std::vector<std::pair<std::string, double>>& terms) {
  nlohmann::json o = nlohmann::json::object();
  for (const auto& [n, v] : terms) o[n] = v;
  return o;
}

std::vector<std::pair<std::string, double>> terms_from(const nlohmann::json& j) {
  std::vector<std::pair<std::string, double>> out;
  for (auto it = j.begin(); it != j.end(); ++it) out.emplace_back(it.key(), it.value().get<double>());
  return out;
}

}  // namespace

nlohmann::json to_json(const SyntheticDGP& d) {
  using nlohmann::json;
  json covs = json::array();
  for (const auto& c : d.covariates) {
    covs.push_back({{"name", c.name},
                    {"type", c.type},
                    {"value", c.value},
                    {"slope", c.slope},
                    {"height", c.height},
                    {"center", {c.center.x, c.center.y}},
                    {"sd", c.sd},
                    {"size", c.size}});
  }
  json j = {{"window", {d.window.xmin, d.window.ymin, d.window.xmax, d.window.ymax}},
            {"nx", d.nx},
            {"ny", d.ny},
            {"covariates", covs},
            {"propensity",
             {{"intercept", d.propensity_intercept},
              {"coefficients", terms_json(d.propensity_coefficients)},
              {"history_coef", d.history_coef}}},
            {"outcome",
             {{"intercept", d.outcome_intercept},
              {"coefficients", terms_json(d.outcome_coefficients)},
              {"carryover", d.carryover},
              {"spillover_range", d.spillover_range},
              {"mediator_bonus", d.mediator_bonus},
              {"bonus_mark", d.bonus_mark},
              {"effect_modifier", d.effect_modifier},
              {"modifier_coef", d.modifier_coef}}}};
  if (d.mediator) {
    j["mediator"] = {{"labels", d.mediator->labels},
                     {"exits", d.mediator->tree.exits},
                     {"final_mark", d.mediator->tree.final_mark},
                     {"covariates", d.mediator->covariates},
                     {"stages", d.mediator->stages}};
  }
  return j;
}

SyntheticDGP dgp_from_json(const nlohmann::json& j) {
  SyntheticDGP d;
  try {
    if (j.contains("window")) {
      const auto w = j.at("window").get<std::vector<double>>();
      if (w.size() != 4) throw InvalidArgument("dgp: window needs [xmin, ymin, xmax, ymax]");
      d.window = {w[0], w[1], w[2], w[3]};
    }
    d.nx = j.value("nx", d.nx);
    d.ny = j.value("ny", d.ny);
    if (j.contains("covariates")) {
      for (const auto& c : j.at("covariates")) {
        SyntheticCovariate s;
        s.name = c.at("name").get<std::string>();
        s.type = c.value("type", s.type);
        s.value = c.value("value", s.value);
        s.slope = c.value("slope", s.slope);
        s.height = c.value("height", s.height);
        if (c.contains("center")) {
          const auto p = c.at("center").get<std::vector<double>>();
          if (p.size() != 2) throw InvalidArgument("dgp: covariate center needs [x, y]");
          s.center = {p[0], p[1]};
        }
        s.sd = c.value("sd", s.sd);
        s.size = c.value("size", s.size);
        d.covariates.push_back(s);
      }
    }
    if (j.contains("propensity")) {
      const auto& p = j.at("propensity");
      d.propensity_intercept = p.value("intercept", d.propensity_intercept);
      if (p.contains("coefficients")) d.propensity_coefficients = terms_from(p.at("coefficients"));
      d.history_coef = p.value("history_coef", d.history_coef);
    }
    if (j.contains("outcome")) {
      const auto& o = j.at("outcome");
      d.outcome_intercept = o.value("intercept", d.outcome_intercept);
      if (o.contains("coefficients")) d.outcome_coefficients = terms_from(o.at("coefficients"));
      if (o.contains("carryover")) d.carryover = o.at("carryover").get<std::vector<double>>();
      d.spillover_range = o.value("spillover_range", d.spillover_range);
      d.mediator_bonus = o.value("mediator_bonus", d.mediator_bonus);
      d.bonus_mark = o.value("bonus_mark", d.bonus_mark);
      d.effect_modifier = o.value("effect_modifier", d.effect_modifier);
      d.modifier_coef = o.value("modifier_coef", d.modifier_coef);
    }
    if (j.contains("mediator") && !j.at("mediator").is_null()) {
      const auto& m = j.at("mediator");
      MediatorTruth t;
      t.labels = m.at("labels").get<std::vector<std::string>>();
      t.tree.exits = m.at("exits").get<std::vector<std::string>>();
      t.tree.final_mark = m.at("final_mark").get<std::string>();
      t.covariates = m.value("covariates", std::vector<std::string>{});
      t.stages = m.at("stages").get<std::vector<std::vector<double>>>();
      d.mediator = t;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("dgp json: ") + e.what());
  }
  d.validate();
  return d;
}

SyntheticDGP load_dgp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open DGP file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse DGP file " + path.string() + ": " + e.what());
  }
  return dgp_from_json(j);
}

// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<const Raster> loglinear_raster(const GridPtr& grid, const CovariateStack& stack, double intercept,
                                               const std::vector<std::pair<std::string, double>>& terms) {
  std::vector<double> v(grid->size());
  for (std::size_t c = 0; c < v.size(); ++c) {
    double eta = intercept;
    for (const auto& [n, coef] : terms) eta += coef * stack.get(n)[c];
    v[c] = grid->active(c) ? std::exp(eta) : 0.0;
  }
  return std::make_shared<const Raster>(grid, std::move(v));
}

}  // namespace

DgpModel::DgpModel(SyntheticDGP dgp) : dgp_(std::move(dgp)) {
  dgp_.validate();
  grid_ = build_grid(SpatialWindow(dgp_.window), dgp_.nx, dgp_.ny);
  auto stack = std::make_shared<CovariateStack>();
  for (const auto& c : dgp_.covariates) {
    std::vector<double> v(grid_->size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = covariate_value(c, dgp_.window, grid_->center(k));
    stack->add(c.name, std::make_shared<const Raster>(grid_, std::move(v)));
  }
  covariates_ = stack;
  propensity_ = TreatmentIntervention(loglinear_raster(grid_, *stack, dgp_.propensity_intercept, dgp_.propensity_coefficients));
  baseline_ = TreatmentIntervention(loglinear_raster(grid_, *stack, dgp_.outcome_intercept, dgp_.outcome_coefficients));

  modifier_.assign(grid_->size(), 1.0);
  if (!dgp_.effect_modifier.empty() && dgp_.modifier_coef != 0.0) {
    const Raster& m = stack->get(dgp_.effect_modifier);
    for (std::size_t c = 0; c < modifier_.size(); ++c) {
      modifier_[c] = 1.0 + dgp_.modifier_coef * m[c];
      if (modifier_[c] < 0.0) {
        throw InvalidArgument("dgp: effect modifier makes the outcome intensity negative at cell " + std::to_string(c));
      }
    }
  }
  modifier_max_ = *std::max_element(modifier_.begin(), modifier_.end());

  if (dgp_.mediator) {
    const auto& m = *dgp_.mediator;
    std::vector<MediatorStage> stages;
    for (std::size_t k = 0; k < m.stages.size(); ++k) {
      MediatorStage s;
      s.exit_mark = m.tree.exits[k];
      s.coefficients = m.stages[k];
      s.converged = true;
      stages.push_back(s);
    }
    mediator_model_.emplace(m.labels, m.covariates, std::vector<std::optional<NaturalCubicBasis>>(m.covariates.size()),
                            m.tree, stages);
    if (!dgp_.bonus_mark.empty()) {
      const auto it = std::find(m.labels.begin(), m.labels.end(), dgp_.bonus_mark);
      bonus_index_ = static_cast<int>(it - m.labels.begin());
    }
  }
}

std::vector<std::string> DgpModel::covariate_names() const {
  std::vector<std::string> names;
  for (const auto& c : dgp_.covariates) names.push_back(c.name);
  if (dgp_.history_coef != 0.0) names.push_back(history_name("treatment", 1));
  return names;
}

std::vector<std::string> DgpModel::mark_labels() const {
  return dgp_.mediator ? dgp_.mediator->labels : std::vector<std::string>{};
}

std::vector<double> DgpModel::mark_probabilities(std::size_t cell,
                                                 const std::optional<MediatorIntervention>& shift) const {
  if (!mediator_model_) return {};
  std::vector<double> x;
  for (const auto& n : mediator_model_->covariates()) x.push_back(covariates_->get(n)[cell]);
  return mediator_model_->category_probabilities(x, shift);
}

double DgpModel::event_coefficient(int lag, int mark) const {
  if (lag < 0 || lag >= static_cast<int>(dgp_.carryover.size())) return 0.0;
  double a = dgp_.carryover[static_cast<std::size_t>(lag)];
  if (mark >= 0 && mark == bonus_index_) a += dgp_.mediator_bonus;
  return a;
}

namespace {

// Axis factors of the Gaussian spillover kernel: f_i = phi((c_i - s) / rho) / rho * d.
void axis_kernel(const RasterGrid& g, double rho, Point s, std::vector<double>& px, std::vector<double>& py) {
  px.resize(static_cast<std::size_t>(g.nx()));
  py.resize(static_cast<std::size_t>(g.ny()));
  for (int i = 0; i < g.nx(); ++i) px[static_cast<std::size_t>(i)] = normal_pdf((g.center_x(i) - s.x) / rho) / rho * g.dx();
  for (int j = 0; j < g.ny(); ++j) py[static_cast<std::size_t>(j)] = normal_pdf((g.center_y(j) - s.y) / rho) / rho * g.dy();
}

}  // namespace

void DgpModel::spill_masses(Point s, const std::vector<const Region*>& regions, std::vector<double>& out) const {
  out.assign(regions.size(), 0.0);
  const RasterGrid& g = *grid_;
  const double rho = dgp_.spillover_range;
  if (rho == 0.0) {
    const auto c = g.cell_of(s);
    if (!c) return;
    for (std::size_t r = 0; r < regions.size(); ++r) {
      if (regions[r]->includes_cell(*c)) out[r] = modifier_[*c];
    }
    return;
  }
  thread_local std::vector<double> px, py;
  axis_kernel(g, rho, s, px, py);
  const bool flat = modifier_max_ == 1.0 && *std::min_element(modifier_.begin(), modifier_.end()) == 1.0;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& reg = *regions[r];
    if (const auto& rect = reg.rectangle()) {
      if (flat) {
        double sx = 0.0, sy = 0.0;
        for (int i = rect->i0; i <= rect->i1; ++i) sx += px[static_cast<std::size_t>(i)];
        for (int j = rect->j0; j <= rect->j1; ++j) sy += py[static_cast<std::size_t>(j)];
        out[r] = sx * sy;
      } else {
        double acc = 0.0;
        for (int j = rect->j0; j <= rect->j1; ++j) {
          double row = 0.0;
          for (int i = rect->i0; i <= rect->i1; ++i) row += modifier_[g.index(i, j)] * px[static_cast<std::size_t>(i)];
          acc += row * py[static_cast<std::size_t>(j)];
        }
        out[r] = acc;
      }
      continue;
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (reg.includes_cell(c)) {
        acc += modifier_[c] * px[static_cast<std::size_t>(g.col(c))] * py[static_cast<std::size_t>(g.row(c))];
      }
    }
    out[r] = acc;
  }
}

// Offspring sampler: per event, a Poisson number of outcome points spread by
// the spillover kernel and thinned by the effect modifier.
class OutcomeSampler {
 public:
  explicit OutcomeSampler(const DgpModel& m) : m_(m), g_(*m.grid_) {}

  void offspring(Point s, double coef, Rng& rng, std::vector<Point>& out) {
    if (!(coef > 0.0)) return;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double rho = m_.dgp_.spillover_range;
    if (rho == 0.0) {
      const auto c = g_.cell_of(s);
      if (!c) return;
      const double mean = coef * m_.modifier_[*c];
      if (!(mean > 0.0)) return;
      std::poisson_distribution<long> n(mean);
      const long k = n(rng);
      const Box b = g_.cell_box(*c);
      for (long q = 0; q < k; ++q) out.push_back({b.xmin + unit(rng) * b.width(), b.ymin + unit(rng) * b.height()});
      return;
    }
    axis_kernel(g_, rho, s, px_, py_);
    cumulate(px_, cx_);
    cumulate(py_, cy_);
    const double sx = cx_.back(), sy = cy_.back();
    const double amax = m_.modifier_max_;
    const double mean = coef * amax * sx * sy;
    if (!(mean > 0.0)) return;
    std::poisson_distribution<long> n(mean);
    const long k = n(rng);
    for (long q = 0; q < k; ++q) {
      const int i = pick(cx_, unit(rng) * sx);
      const int j = pick(cy_, unit(rng) * sy);
      const std::size_t c = g_.index(i, j);
      const double u = unit(rng);
      if (u * amax >= m_.modifier_[c]) continue;
      const Box b = g_.cell_box(c);
      out.push_back({b.xmin + unit(rng) * b.width(), b.ymin + unit(rng) * b.height()});
    }
  }

 private:
  static void cumulate(const std::vector<double>& f, std::vector<double>& cum) {
    cum.resize(f.size());
    double run = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) cum[i] = (run += f[i]);
  }
  static int pick(const std::vector<double>& cum, double u) {
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    return static_cast<int>(it - cum.begin());
  }

  const DgpModel& m_;
  const RasterGrid& g_;
  std::vector<double> px_, py_, cx_, cy_;
};

PatternSeries simulate_series(const DgpModel& model, int T, std::uint64_t seed) {
  if (T < 1) throw InvalidArgument("simulate_series: T must be >= 1");
  const auto& dgp = model.spec();
  const GridPtr& grid = model.grid();
  OutcomeSampler sampler(model);
  std::vector<MarkedPointPattern> treat;
  std::vector<std::vector<Point>> outcomes;
  std::vector<CovariatesPtr> stacks;
  treat.reserve(static_cast<std::size_t>(T));
  const bool history = dgp.history_coef != 0.0;
  const std::string hname = history_name("treatment", 1);
  const std::size_t lmax = dgp.carryover.size();
  for (int t = 1; t <= T; ++t) {
    Rng rng = make_rng(seed, {kTreatStream, static_cast<std::uint64_t>(t)});
    const TreatmentIntervention* lam = &model.propensity();
    TreatmentIntervention with_history;
    CovariatesPtr stack = model.covariates();
    if (history) {
      const auto& prev = t > 1 ? treat.back().points() : std::vector<Point>{};
      auto hmap = prev.empty() ? std::make_shared<const Raster>(grid, 0.0)
                               : std::make_shared<const Raster>(
                                     decay_transform(distance_map(grid, prev), decay_defaults::kHistory));
      std::vector<double> v(grid->size());
      const Raster& base = model.propensity().intensity();
      for (std::size_t c = 0; c < v.size(); ++c) v[c] = base[c] * std::exp(dgp.history_coef * (*hmap)[c]);
      with_history = TreatmentIntervention(std::make_shared<const Raster>(grid, std::move(v)));
      lam = &with_history;
      auto s = std::make_shared<CovariateStack>(*model.covariates());
      s->add(hname, hmap);
      stack = s;
    }
    PointPattern w = sample_pattern(*lam, t, rng);
    std::vector<int> marks(w.size(), kUnmarked);
    if (model.has_mediator()) {
      std::vector<std::vector<double>> probs;
      probs.reserve(w.size());
      for (const auto& p : w.points()) probs.push_back(model.mark_probabilities(*grid->cell_of(p), std::nullopt));
      marks = sample_marks(probs, rng);
    }
    treat.emplace_back(std::move(w), std::move(marks));
    stacks.push_back(stack);

    std::vector<Point> y = sample_pattern(model.baseline_outcome(), t, rng).points();
    for (std::size_t lag = 0; lag < lmax; ++lag) {
      const int src = t - static_cast<int>(lag);
      if (src < 1) break;
      const auto& ev = treat[static_cast<std::size_t>(src - 1)];
      for (std::size_t q = 0; q < ev.size(); ++q) {
        sampler.offspring(ev.points()[q], model.event_coefficient(static_cast<int>(lag), ev.marks()[q]), rng, y);
      }
    }
    outcomes.push_back(std::move(y));
  }
  std::vector<Period> periods;
  periods.reserve(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    const auto k = static_cast<std::size_t>(t - 1);
    periods.push_back({std::move(treat[k]), PointPattern::unchecked(t, std::move(outcomes[k])), stacks[k]});
  }
  return PatternSeries(grid, model.mark_labels(), std::move(periods));
}

PatternSeries simulate_series(const SyntheticDGP& dgp, int T, std::uint64_t seed) {
  return simulate_series(DgpModel(dgp), T, seed);
}

// ---------------------------------------------------------------------------

namespace {

// Intervention-driven outcome mass of one draw at window position k.
void draw_contribution(const DgpModel& model, const InterventionPair& iv, int k, int lag, std::uint64_t seed,
                       std::size_t d, const std::vector<const Region*>& regions, std::vector<double>& out,
                       std::vector<double>& tmp) {
  Rng rng = make_rng(seed, {kOracleStream, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(d)});
  const PointPattern w = sample_pattern(iv.at(k), 0, rng);
  std::vector<int> marks(w.size(), kUnmarked);
  if (model.has_mediator() && !w.empty()) {
    std::vector<std::vector<double>> probs;
    for (const auto& p : w.points()) probs.push_back(model.mark_probabilities(*model.grid()->cell_of(p), iv.mediator));
    marks = sample_marks(probs, rng);
  }
  out.assign(regions.size(), 0.0);
  for (std::size_t q = 0; q < w.size(); ++q) {
    const double a = model.event_coefficient(lag, marks[q]);
    if (a == 0.0) continue;
    model.spill_masses(w.points()[q], regions, tmp);
    for (std::size_t r = 0; r < regions.size(); ++r) out[r] += a * tmp[r];
  }
}

struct Moments {
  std::vector<double> sum, sumsq;
};

constexpr std::size_t kChunk = 1024;

// Per-region mean and variance of f_a - f_b over draws, chunked so the
// reduction order is independent of the worker count. b may be null.
void oracle_moments(const DgpModel& model, const InterventionPair& a, const InterventionPair* b,
                    const std::vector<const Region*>& regions, std::size_t n_draws, std::uint64_t seed,
                    std::vector<double>& mean, std::vector<double>& var_of_mean) {
  const int L = a.L;
  const std::size_t R = regions.size();
  mean.assign(R, 0.0);
  var_of_mean.assign(R, 0.0);
  const std::size_t n_chunks = (n_draws + kChunk - 1) / kChunk;
  for (int k = 0; k < L; ++k) {
    const int lag = L - 1 - k;
    if (lag >= static_cast<int>(model.spec().carryover.size())) continue;
    std::vector<Moments> chunks(n_chunks);
    parallel_for(n_chunks, [&](std::size_t ch) {
      Moments m{std::vector<double>(R, 0.0), std::vector<double>(R, 0.0)};
      std::vector<double> va, vb, tmp;
      const std::size_t end = std::min(n_draws, (ch + 1) * kChunk);
      for (std::size_t d = ch * kChunk; d < end; ++d) {
        draw_contribution(model, a, k, lag, seed, d, regions, va, tmp);
        if (b) {
          draw_contribution(model, *b, k, lag, seed, d, regions, vb, tmp);
          for (std::size_t r = 0; r < R; ++r) va[r] -= vb[r];
        }
        for (std::size_t r = 0; r < R; ++r) {
          m.sum[r] += va[r];
          m.sumsq[r] += va[r] * va[r];
        }
      }
      chunks[ch] = std::move(m);
    });
    const double n = static_cast<double>(n_draws);
    for (std::size_t r = 0; r < R; ++r) {
      std::vector<double> s(n_chunks), s2(n_chunks);
      for (std::size_t ch = 0; ch < n_chunks; ++ch) {
        s[ch] = chunks[ch].sum[r];
        s2[ch] = chunks[ch].sumsq[r];
      }
      const double m1 = pairwise_sum(s) / n;
      const double m2 = pairwise_sum(s2) / n;
      mean[r] += m1;
      var_of_mean[r] += std::max(0.0, m2 - m1 * m1) * n / (n - 1.0) / n;
    }
  }
}

void check_oracle_args(const DgpModel& model, const InterventionPair& iv, const std::vector<const Region*>& regions,
                       std::size_t n_draws) {
  iv.validate();
  if (n_draws < 100) throw InvalidArgument("mc_oracle: need at least 100 draws");
  require_same_grid(*iv.at(0).intensity().grid(), *model.grid(), "oracle intervention");
  for (const Region* r : regions) require_same_grid(*r->grid(), *model.grid(), "oracle region");
}

}  // namespace

std::vector<OracleResult> mc_oracle(const DgpModel& model, const InterventionPair& iv,
                                    const std::vector<const Region*>& regions, std::size_t n_draws, std::uint64_t seed,
                                    const PatternSeries* history) {
  check_oracle_args(model, iv, regions, n_draws);
  std::vector<double> mean, var;
  oracle_moments(model, iv, nullptr, regions, n_draws, seed, mean, var);
  std::vector<OracleResult> out(regions.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    out[r].value = integrate_raster(model.baseline_outcome().intensity(), *regions[r]) + mean[r];
    out[r].se = std::sqrt(var[r]);
    out[r].draws = n_draws;
  }
  if (history) {
    const int L = iv.L;
    const int T = history->T();
    if (T < L) throw InvalidArgument("mc_oracle: history shorter than L");
    const int lmax = static_cast<int>(model.spec().carryover.size()) - 1;
    std::vector<std::vector<double>> per_t(static_cast<std::size_t>(T - L + 1), std::vector<double>(regions.size(), 0.0));
    parallel_for(per_t.size(), [&](std::size_t idx) {
      const int t = L + static_cast<int>(idx);
      std::vector<double> tmp;
      for (int lag = L; lag <= lmax && t - lag >= 1; ++lag) {
        const auto& ev = history->at(t - lag).treatment;
        for (std::size_t q = 0; q < ev.size(); ++q) {
          const double a = model.event_coefficient(lag, ev.marks()[q]);
          if (a == 0.0) continue;
          model.spill_masses(ev.points()[q], regions, tmp);
          for (std::size_t r = 0; r < regions.size(); ++r) per_t[idx][r] += a * tmp[r];
        }
      }
    });
    for (std::size_t r = 0; r < regions.size(); ++r) {
      std::vector<double> col(per_t.size());
      for (std::size_t i = 0; i < per_t.size(); ++i) col[i] = per_t[i][r];
      out[r].value += pairwise_sum(col) / static_cast<double>(col.size());
    }
  }
  return out;
}

OracleResult mc_oracle(const DgpModel& model, const InterventionPair& iv, const Region& region, std::size_t n_draws,
                       std::uint64_t seed, const PatternSeries* history) {
  return mc_oracle(model, iv, std::vector<const Region*>{&region}, n_draws, seed, history).front();
}

OracleResult mc_oracle_contrast(const DgpModel& model, const InterventionPair& a, const InterventionPair& b,
                                const Region& region, std::size_t n_draws, std::uint64_t seed) {
  const std::vector<const Region*> regions{&region};
  check_oracle_args(model, a, regions, n_draws);
  check_oracle_args(model, b, regions, n_draws);
  if (a.L != b.L) throw InvalidArgument("mc_oracle_contrast: interventions must share L");
  // Common random numbers: both arms use the same draw seeds.
  std::vector<double> mean, var;
  oracle_moments(model, a, &b, regions, n_draws, seed, mean, var);
  return {mean[0], std::sqrt(var[0]), n_draws};
}

std::vector<double> exact_intervention_effect(const DgpModel& model, const InterventionPair& iv,
                                              const std::vector<const Region*>& regions) {
  iv.validate();
  const RasterGrid& g = *model.grid();
  for (const Region* r : regions) require_same_grid(*r->grid(), g, "oracle region");
  const double rho = model.spec().spillover_range;
  const auto& A = model.modifier();
  const std::size_t R = regions.size();
  const auto nx = static_cast<std::size_t>(g.nx()), ny = static_cast<std::size_t>(g.ny());
  // DX[i][i'] = E over a uniform source in column i of the x-factor at column i'.
  std::vector<double> DX(nx * nx, 0.0), DY(ny * ny, 0.0);
  if (rho > 0.0) {
    const Box& w = g.window().bounds();
    for (std::size_t i = 0; i < nx; ++i) {
      const double x0 = w.xmin + static_cast<double>(i) * g.dx(), x1 = x0 + g.dx();
      for (std::size_t q = 0; q < nx; ++q) {
        const double xc = g.center_x(static_cast<int>(q));
        DX[i * nx + q] = normal_cdf((xc - x0) / rho) - normal_cdf((xc - x1) / rho);
      }
    }
    for (std::size_t j = 0; j < ny; ++j) {
      const double y0 = w.ymin + static_cast<double>(j) * g.dy(), y1 = y0 + g.dy();
      for (std::size_t q = 0; q < ny; ++q) {
        const double yc = g.center_y(static_cast<int>(q));
        DY[j * ny + q] = normal_cdf((yc - y0) / rho) - normal_cdf((yc - y1) / rho);
      }
    }
  }
  // Expected spill mass of a source uniform in cell c into each region.
  std::vector<std::vector<double>> cell_mass(g.size(), std::vector<double>(R, 0.0));
  parallel_for(g.size(), [&](std::size_t c) {
    const auto i = static_cast<std::size_t>(g.col(c)), j = static_cast<std::size_t>(g.row(c));
    for (std::size_t r = 0; r < R; ++r) {
      const Region& reg = *regions[r];
      if (rho == 0.0) {
        cell_mass[c][r] = reg.includes_cell(c) ? A[c] : 0.0;
        continue;
      }
      double acc = 0.0;
      for (std::size_t q = 0; q < g.size(); ++q) {
        if (!reg.includes_cell(q)) continue;
        acc += A[q] * DX[i * nx + static_cast<std::size_t>(g.col(q))] * DY[j * ny + static_cast<std::size_t>(g.row(q))];
      }
      cell_mass[c][r] = acc;
    }
  });
  std::vector<double> out(R);
  for (std::size_t r = 0; r < R; ++r) out[r] = integrate_raster(model.baseline_outcome().intensity(), *regions[r]);
  const int L = iv.L;
  for (int k = 0; k < L; ++k) {
    const int lag = L - 1 - k;
    if (lag >= static_cast<int>(model.spec().carryover.size())) continue;
    const Raster& lam = iv.at(k).intensity();
    std::vector<std::vector<double>> terms(R, std::vector<double>(g.size(), 0.0));
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double m = lam[c] * g.cell_area(c);
      if (m == 0.0) continue;
      double coef = model.event_coefficient(lag, kUnmarked);
      if (model.has_mediator()) {
        const auto p = model.mark_probabilities(c, iv.mediator);
        coef = 0.0;
        for (std::size_t q = 0; q < p.size(); ++q) coef += p[q] * model.event_coefficient(lag, static_cast<int>(q));
      }
      for (std::size_t r = 0; r < R; ++r) terms[r][c] = m * coef * cell_mass[c][r];
    }
    for (std::size_t r = 0; r < R; ++r) out[r] += pairwise_sum(terms[r]);
  }
  return out;
}

InterventionPair build_intervention(const DgpModel& model, const InterventionRecipe& recipe, int L) {
  Raster shape;
  if (recipe.shape == "propensity") {
    shape = normalize_raster(model.propensity().intensity());
  } else if (recipe.shape == "uniform") {
    shape = normalize_raster(Raster(model.grid(), 1.0));
  } else {
    throw InvalidArgument("intervention recipe: unknown shape '" + recipe.shape + "'");
  }
  return make_pair_intervention(intensified(shape, recipe.count), L, recipe.mediator, recipe.label);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json recipe_json(const InterventionRecipe& r) {
  nlohmann::json j = {{"count", r.count}, {"shape", r.shape}, {"label", r.label}};
  if (r.mediator) j["mediator"] = {{"delta", r.mediator->delta}, {"target_mark", r.mediator->target_mark}};
  return j;
}

InterventionRecipe recipe_from(const nlohmann::json& j, InterventionRecipe r) {
  r.count = j.value("count", r.count);
  r.shape = j.value("shape", r.shape);
  r.label = j.value("label", r.label);
  if (j.contains("mediator") && !j.at("mediator").is_null()) {
    MediatorIntervention m;
    m.delta = j.at("mediator").at("delta").get<double>();
    m.target_mark = j.at("mediator").at("target_mark").get<std::string>();
    m.validate();
    r.mediator = m;
  }
  return r;
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.estimand = j.value("estimand", c.estimand);
    if (j.contains("T_values")) c.T_values = j.at("T_values").get<std::vector<int>>();
    c.L = j.value("L", c.L);
    if (j.contains("a")) c.a = recipe_from(j.at("a"), c.a);
    if (j.contains("b")) c.b = recipe_from(j.at("b"), c.b);
    if (j.contains("region") && !j.at("region").is_null()) {
      const auto v = j.at("region").get<std::vector<double>>();
      if (v.size() != 4) throw InvalidArgument("experiment: region needs [xmin, ymin, xmax, ymax]");
      c.region = Box{v[0], v[1], v[2], v[3]};
    }
    c.bandwidth = j.value("bandwidth", c.bandwidth);
    c.bandwidth_reference_T = j.value("bandwidth_reference_T", c.bandwidth_reference_T);
    c.bandwidth_exponent = j.value("bandwidth_exponent", c.bandwidth_exponent);
    if (j.contains("kernel")) c.kernel = parse_kernel(j.at("kernel").get<std::string>());
    c.oracle_draws = j.value("oracle_draws", c.oracle_draws);
    c.pixel_factor = j.value("pixel_factor", c.pixel_factor);
    if (j.contains("truncation_quantile") && !j.at("truncation_quantile").is_null()) {
      c.truncation_quantile = j.at("truncation_quantile").get<double>();
    }
    c.replicates = j.value("replicates", c.replicates);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("experiment json: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"estimand", c.estimand},   {"T_values", c.T_values},         {"L", c.L},
                      {"a", recipe_json(c.a)},    {"b", recipe_json(c.b)},           {"bandwidth", c.bandwidth},
                      {"bandwidth_reference_T", c.bandwidth_reference_T}, {"bandwidth_exponent", c.bandwidth_exponent},
                      {"kernel", to_string(c.kernel)}, {"oracle_draws", c.oracle_draws}, {"pixel_factor", c.pixel_factor},
                      {"replicates", c.replicates}};
  j["region"] = c.region ? nlohmann::json{c.region->xmin, c.region->ymin, c.region->xmax, c.region->ymax}
                         : nlohmann::json(nullptr);
  j["truncation_quantile"] = c.truncation_quantile ? nlohmann::json(*c.truncation_quantile) : nlohmann::json(nullptr);
  return j;
}

const CoverageRow& CoverageTable::row(int T, const std::string& estimator) const {
  for (const auto& r : rows) {
    if (r.T == T && r.estimator == estimator) return r;
  }
  throw InvalidArgument("coverage table: no row for T=" + std::to_string(T) + ", " + estimator);
}

namespace {

struct ReplicateResult {
  bool ok = false;
  double estimate = 0.0;
  Interval ci90, ci95;
  double ess_a = 0.0, ess_b = 0.0;
};

const char* const kEstimators[] = {"ipw", "hajek"};

double experiment_bandwidth(const ExperimentConfig& c, int T) {
  return c.bandwidth * std::pow(static_cast<double>(T) / c.bandwidth_reference_T, -c.bandwidth_exponent);
}

}  // namespace

CoverageTable coverage_experiment(const SyntheticDGP& dgp, const ExperimentConfig& config, std::uint64_t seed) {
  if (config.replicates < 50) throw InvalidArgument("coverage_experiment: need at least 50 replicates");
  if (config.T_values.empty()) throw InvalidArgument("coverage_experiment: no T values");
  for (int T : config.T_values) {
    if (T < config.L) throw InvalidArgument("coverage_experiment: every T must be >= L");
  }
  const std::string& est = config.estimand;
  if (est != "ate" && est != "indirect" && est != "cate") {
    throw InvalidArgument("coverage_experiment: unknown estimand '" + est + "'");
  }
  const DgpModel model(dgp);
  if (est == "indirect" && !model.has_mediator()) throw InvalidArgument("coverage_experiment: indirect effect needs a mediator");
  if (est == "cate" && dgp.effect_modifier.empty()) throw InvalidArgument("coverage_experiment: cate needs an effect modifier");

  const Region region = config.region ? Region::from_box(model.grid(), *config.region, "B") : Region::whole(model.grid());
  const InterventionPair iv_a = build_intervention(model, config.a, config.L);
  const InterventionPair iv_b = build_intervention(model, config.b, config.L);
  InterventionPair iv_mid = iv_b;  // treatment of b, mediator of a
  iv_mid.mediator = iv_a.mediator;
  iv_mid.label = "middle";

  // Truth.
  double truth = 0.0, truth_se = 0.0;
  std::optional<PixelPartition> partition;
  std::vector<double> moderator;
  if (est == "ate") {
    const auto o = mc_oracle_contrast(model, iv_a, iv_b, region, config.oracle_draws, derive_seed(seed, {1}));
    truth = o.value;
    truth_se = o.se;
  } else if (est == "indirect") {
    const auto o = mc_oracle_contrast(model, iv_mid, iv_b, region, config.oracle_draws, derive_seed(seed, {1}));
    truth = o.value;
    truth_se = o.se;
  } else {
    partition = PixelPartition::blocks(model.grid(), config.pixel_factor);
    moderator = partition->pixel_means(model.covariates()->get(dgp.effect_modifier));
    std::vector<Region> pix;
    for (std::size_t p = 0; p < partition->size(); ++p) {
      std::vector<std::uint8_t> mask(model.grid()->size(), 0);
      for (std::size_t c : partition->cells(p)) mask[c] = 1;
      pix.push_back(Region::from_mask(model.grid(), std::move(mask)));
    }
    std::vector<const Region*> ptrs;
    for (const auto& r : pix) ptrs.push_back(&r);
    const auto ya = exact_intervention_effect(model, iv_a, ptrs);
    const auto yb = exact_intervention_effect(model, iv_b, ptrs);
    std::vector<double> tau(ya.size());
    for (std::size_t p = 0; p < tau.size(); ++p) tau[p] = ya[p] - yb[p];
    truth = project_cate_t(tau, moderator, ModeratorBasis::linear())(1);
  }

  const int T_max = *std::max_element(config.T_values.begin(), config.T_values.end());
  const std::size_t nT = config.T_values.size();
  const auto n_rep = static_cast<std::size_t>(config.replicates);
  // results[rep][T index][estimator]
  std::vector<std::vector<std::array<ReplicateResult, 2>>> results(n_rep,
                                                                    std::vector<std::array<ReplicateResult, 2>>(nT));
  WeightOptions wopts;
  wopts.truncation_quantile = config.truncation_quantile;
  const auto names = model.covariate_names();

  parallel_for(n_rep, [&](std::size_t rep) {
    const PatternSeries full = simulate_series(model, T_max, derive_seed(seed, {2, rep}));
    for (std::size_t ti = 0; ti < nT; ++ti) {
      try {
        const PatternSeries s = config.T_values[ti] == T_max ? full : full.prefix(config.T_values[ti]);
        const FittedPropensity fit = fit_poisson_intensity(s, names);
        const auto log_e = propensity_log_densities(s, predict_series(fit, s));
        SmoothingSpec spec;
        spec.kernel = config.kernel;
        spec.bandwidth = config.bandwidth > 0.0 ? experiment_bandwidth(config, s.T()) : scott_bandwidth(s);
        auto& slot = results[rep][ti];
        if (est == "ate" || est == "indirect") {
          const auto outcomes = outcome_integrals(s, spec, region);
          EffectEstimate e;
          if (est == "ate") {
            e = contrast(compute_weight_series(s, log_e, iv_a, wopts), compute_weight_series(s, log_e, iv_b, wopts),
                         outcomes);
          } else {
            const MediatorScoreModel med = fit_mediator_score(s, dgp.mediator->covariates, dgp.mediator->tree);
            const auto wm = compute_mediation_weight_series(s, log_e, med, iv_mid, wopts);
            const auto wb = compute_mediation_weight_series(s, log_e, med, iv_b, wopts);
            e = contrast(wm, wb, outcomes);
          }
          slot[0] = {true, e.ipw, e.ci90_ipw, e.ci95_ipw, e.ess_a, e.ess_b};
          slot[1] = {true, e.hajek, e.ci90_hajek, e.ci95_hajek, e.ess_a, e.ess_b};
        } else {
          const auto wa = compute_weight_series(s, log_e, iv_a, wopts);
          const auto wb = compute_weight_series(s, log_e, iv_b, wopts);
          const auto panel = static_moderator(dgp.effect_modifier, moderator, s.T());
          for (int m = 0; m < 2; ++m) {
            CateOptions opts;
            opts.mode = m == 0 ? EstimatorMode::ipw : EstimatorMode::hajek;
            const auto proj = estimate_cate(s, wa, wb, spec, *partition, panel, ModeratorBasis::linear(), opts);
            const CateValue v = proj.coefficient(1);
            slot[static_cast<std::size_t>(m)] = {true, v.value, v.ci90, v.ci95, wa.ess, wb.ess};
          }
        }
      } catch (const std::exception&) {
        // counted as a failed replicate
        results[rep][ti] = {};
      }
    }
  });

  CoverageTable table;
  table.estimand = est;
  for (std::size_t ti = 0; ti < nT; ++ti) {
    for (std::size_t e = 0; e < 2; ++e) {
      CoverageRow row;
      row.T = config.T_values[ti];
      row.estimator = kEstimators[e];
      row.truth = truth;
      row.truth_se = truth_se;
      std::vector<double> est_v, sq, c95, c90, hw, rej, sign, ea, eb;
      for (std::size_t rep = 0; rep < n_rep; ++rep) {
        const auto& r = results[rep][ti][e];
        if (!r.ok) {
          ++row.failures;
          continue;
        }
        est_v.push_back(r.estimate);
        sq.push_back((r.estimate - truth) * (r.estimate - truth));
        c95.push_back(r.ci95.lo <= truth && truth <= r.ci95.hi ? 1.0 : 0.0);
        c90.push_back(r.ci90.lo <= truth && truth <= r.ci90.hi ? 1.0 : 0.0);
        hw.push_back(0.5 * (r.ci95.hi - r.ci95.lo));
        rej.push_back(r.ci95.lo > 0.0 || r.ci95.hi < 0.0 ? 1.0 : 0.0);
        sign.push_back((r.estimate > 0.0) == (truth > 0.0) ? 1.0 : 0.0);
        ea.push_back(r.ess_a);
        eb.push_back(r.ess_b);
      }
      row.replicates = static_cast<int>(est_v.size());
      if (!est_v.empty()) {
        const double n = static_cast<double>(est_v.size());
        row.mean_estimate = pairwise_sum(est_v) / n;
        row.bias = row.mean_estimate - truth;
        row.rmse = std::sqrt(pairwise_sum(sq) / n);
        row.coverage95 = pairwise_sum(c95) / n;
        row.coverage90 = pairwise_sum(c90) / n;
        row.mean_halfwidth95 = pairwise_sum(hw) / n;
        row.rejection95 = pairwise_sum(rej) / n;
        row.sign_correct = pairwise_sum(sign) / n;
        row.mean_ess_a = pairwise_sum(ea) / n;
        row.mean_ess_b = pairwise_sum(eb) / n;
      }
      table.rows.push_back(row);
    }
  }
  return table;
}

nlohmann::json to_json(const CoverageTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"T", r.T},
                    {"estimator", r.estimator},
                    {"truth", r.truth},
                    {"truth_se", r.truth_se},
                    {"mean_estimate", r.mean_estimate},
                    {"bias", r.bias},
                    {"rmse", r.rmse},
                    {"coverage95", r.coverage95},
                    {"coverage90", r.coverage90},
                    {"mean_halfwidth95", r.mean_halfwidth95},
                    {"rejection95", r.rejection95},
                    {"sign_correct", r.sign_correct},
                    {"mean_ess_a", r.mean_ess_a},
                    {"mean_ess_b", r.mean_ess_b},
                    {"replicates", r.replicates},
                    {"failures", r.failures}});
  }
  return {{"estimand", t.estimand}, {"rows", rows}};
}

std::string to_csv(const CoverageTable& t) {
  std::ostringstream o;
  o.precision(17);
  o << "estimand,T,estimator,truth,truth_se,mean_estimate,bias,rmse,coverage95,coverage90,mean_halfwidth95,rejection95,sign_correct,"
       "mean_ess_a,mean_ess_b,replicates,failures\n";
  for (const auto& r : t.rows) {
    o << t.estimand << ',' << r.T << ',' << r.estimator << ',' << r.truth << ',' << r.truth_se << ','
      << r.mean_estimate << ',' << r.bias << ',' << r.rmse << ',' << r.coverage95 << ',' << r.coverage90 << ','
      << r.mean_halfwidth95 << ',' << r.rejection95 << ',' << r.sign_correct << ',' << r.mean_ess_a << ',' << r.mean_ess_b << ',' << r.replicates
      << ',' << r.failures << '\n';
  }
  return o.str();
}

}  // namespace geocausal
