#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "geocausal/ate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixture = GC_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gc_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "gc_cli_tests" / "last.log";
  fs::create_directories(log.parent_path());
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + std::string(GC_CLI_PATH) + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int st = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

// Copy of the fixture config with edits, written next to the fixture data.
fs::path edited_config(const std::string& name, const std::function<void(json&)>& edit) {
  json c = load(kFixture / "config.json");
  for (auto* key : {"events"}) c[key] = (kFixture / c[key].get<std::string>()).string();
  for (auto& [k, v] : c["covariates"].items()) v = (kFixture / v.get<std::string>()).string();
  edit(c);
  const fs::path p = scratch(name) / "config.json";
  std::ofstream(p) << c.dump(2);
  return p;
}

void compare(const json& want, const json& got, const std::string& path, double tol, int& mismatches) {
  if (want.is_number() && got.is_number()) {
    const double a = want.get<double>(), b = got.get<double>();
    if (std::abs(a - b) > tol * std::max(1.0, std::abs(a))) {
      if (mismatches++ < 5) MESSAGE(path << ": want " << a << " got " << b);
    }
    return;
  }
  if (want.type() != got.type()) {
    if (mismatches++ < 5) MESSAGE(path << ": type differs");
    return;
  }
  if (want.is_object()) {
    if (want.size() != got.size()) ++mismatches;
    for (auto& [k, v] : want.items()) {
      if (!got.contains(k)) {
        if (mismatches++ < 5) MESSAGE(path << "/" << k << ": missing");
        continue;
      }
      compare(v, got.at(k), path + "/" + k, tol, mismatches);
    }
  } else if (want.is_array()) {
    if (want.size() != got.size()) {
      if (mismatches++ < 5) MESSAGE(path << ": length differs");
      return;
    }
    for (std::size_t i = 0; i < want.size(); ++i) compare(want[i], got[i], path + "/" + std::to_string(i), tol, mismatches);
  } else if (want != got) {
    if (mismatches++ < 5) MESSAGE(path << ": " << want.dump() << " vs " << got.dump());
  }
}

}  // namespace

TEST_CASE("missing input files exit with code 2 and name the path") {
  const auto r = run("ate --config /nonexistent/run.json");
  CHECK(r.code == 2);
  CHECK(r.output.find("/nonexistent/run.json") != std::string::npos);
  const auto cfg = edited_config("missing_events", [](json& c) { c["events"] = "/nonexistent/events.csv"; });
  const auto r2 = run("ate --config \"" + cfg.string() + "\" --out \"" + (cfg.parent_path() / "out").string() + "\"");
  CHECK(r2.code == 2);
  CHECK(r2.output.find("/nonexistent/events.csv") != std::string::npos);
}

TEST_CASE("unknown flags print usage and fail") {
  const auto r = run("ate --config x.json --frobnicate");
  CHECK(r.code != 0);
  CHECK(r.output.find("Usage") != std::string::npos);
  CHECK(run("").code != 0);
  CHECK(run("ate").code != 0);  // --config is required
}

TEST_CASE("golden fixture") {
  for (const std::string cmd : {"ate", "cate", "mediate"}) {
    const fs::path out = scratch("golden_" + cmd);
    const auto r = run(cmd + " --config \"" + (kFixture / "config.json").string() + "\" --out \"" + out.string() + "\"");
    REQUIRE(r.code == 0);
    int mismatches = 0;
    compare(load(kFixture / ("expected_" + cmd + ".json")), load(out / "results.json"), cmd, 1e-9, mismatches);
    CHECK_MESSAGE(mismatches == 0, cmd);
  }
}

TEST_CASE("a range of lags gives one estimate per lag and region") {
  const fs::path out = scratch("lags");
  const auto r = run("ate --config \"" + (kFixture / "config.json").string() + "\" --L 1..14 --out \"" + out.string() + "\"");
  REQUIRE(r.code == 0);
  const json j = load(out / "results.json");
  std::map<std::string, std::set<int>> per;
  for (const auto& e : j["results"]["effects"]) {
    per[e["intervention_a"].get<std::string>() + "|" + e["region"].get<std::string>()].insert(e["L"].get<int>());
  }
  REQUIRE(per.size() == 4);  // two contrasts x two regions
  for (const auto& [k, ls] : per) {
    CHECK(ls.size() == 14);
    CHECK(*ls.begin() == 1);
    CHECK(*ls.rbegin() == 14);
  }
  CHECK(j["status"].size() == 28);
  CHECK(fs::exists(out / "ate_high_vs_low.svg"));
}

TEST_CASE("results are byte-identical across thread counts") {
  const std::string cfg = "\"" + (kFixture / "config.json").string() + "\"";
  for (const std::string cmd : {"ate", "cate", "mediate"}) {
    const fs::path o1 = scratch(cmd + "_t1"), o4 = scratch(cmd + "_t4"), oe = scratch(cmd + "_env");
    REQUIRE(run(cmd + " --config " + cfg + " --threads 1 --out \"" + o1.string() + "\"").code == 0);
    REQUIRE(run(cmd + " --config " + cfg + " --threads 4 --out \"" + o4.string() + "\"").code == 0);
    REQUIRE(run(cmd + " --config " + cfg + " --out \"" + oe.string() + "\"", "GEOCAUSAL_THREADS=3").code == 0);
    const std::string a = slurp(o1 / "results.json");
    CHECK(a == slurp(o4 / "results.json"));
    CHECK(a == slurp(oe / "results.json"));
  }
}

TEST_CASE("results.json round-trips") {
  const fs::path out = scratch("roundtrip");
  REQUIRE(run("ate --config \"" + (kFixture / "config.json").string() + "\" --out \"" + out.string() + "\"").code == 0);
  const std::string text = slurp(out / "results.json");
  const json j = json::parse(text);
  CHECK(j.dump(2) + "\n" == text);
  for (const auto& e : j["results"]["effects"]) {
    const auto back = geocausal::effect_from_json(e);
    CHECK(geocausal::to_json(back) == e);
  }
  CHECK(j.contains("provenance"));
  CHECK(j["provenance"]["tool"] == "geocausal");
}

TEST_CASE("identical interventions give a zero effect") {
  const auto cfg = edited_config("same", [](json& c) { c["contrasts"] = json::array({{{"a", "low"}, {"b", "low"}}}); });
  const fs::path out = cfg.parent_path() / "out";
  REQUIRE(run("ate --config \"" + cfg.string() + "\" --out \"" + out.string() + "\"").code == 0);
  const json j = load(out / "results.json");
  REQUIRE(j["results"]["effects"].size() == 6);
  for (const auto& e : j["results"]["effects"]) {
    CHECK(e["ipw"].get<double>() == 0.0);
    CHECK(e["hajek"].get<double>() == 0.0);
  }
}

TEST_CASE("a failing estimand is reported and sets the exit code") {
  const fs::path out = scratch("partial");
  const auto r = run("ate --config \"" + (kFixture / "config.json").string() + "\" --L 2,500 --out \"" + out.string() + "\"");
  CHECK(r.code == 1);
  const json j = load(out / "results.json");
  CHECK(j["ok"] == false);
  int ok = 0, bad = 0;
  for (const auto& s : j["status"]) {
    if (s["ok"].get<bool>()) {
      ++ok;
    } else {
      ++bad;
      CHECK(s["message"].get<std::string>().find("500") != std::string::npos);
    }
  }
  CHECK(ok == 2);
  CHECK(bad == 2);
  CHECK(j["results"]["effects"].size() == 4);
}

TEST_CASE("report renders 95% and 90% bars") {
  const fs::path out = scratch("report");
  REQUIRE(run("report --input \"" + (kFixture / "expected_mediate.json").string() + "\" --out \"" + out.string() + "\"").code == 0);
  const std::string svg = slurp(out / "mediation_high_vs_low.svg");
  CHECK(svg.find("stroke-width=\"3.5\"") != std::string::npos);
  CHECK(svg.find("stroke-width=\"1\"") != std::string::npos);
  CHECK(run("report --input /nonexistent/results.json").code == 2);
}

TEST_CASE("other subcommands") {
  const fs::path out = scratch("sub");
  const std::string cfg = "\"" + (kFixture / "config.json").string() + "\"";
  REQUIRE(run("fit-propensity --config " + cfg + " --out \"" + (out / "fit").string() + "\"").code == 0);
  CHECK(fs::exists(out / "fit" / "propensity.json"));
  REQUIRE(run("design-intervention --config " + cfg + " --out \"" + (out / "iv").string() + "\"").code == 0);
  CHECK(fs::exists(out / "iv" / "intervention_high.asc"));

  REQUIRE(run("simulate --dgp \"" + (kFixture.parent_path() / "dgp_small.json").string() + "\" --T 40 --seed 2 --out \"" +
              (out / "sim").string() + "\"").code == 0);
  CHECK(fs::exists(out / "sim" / "events.csv"));
  REQUIRE(run("ate --config \"" + (out / "sim" / "config.json").string() + "\" --out \"" + (out / "sim_ate").string() + "\"").code == 0);

  const fs::path exp = out / "experiment.json";
  std::ofstream(exp) << json{{"T_values", {60}}, {"L", 1}, {"replicates", 50}, {"oracle_draws", 1000}}.dump();
  REQUIRE(run("validate --experiment \"" + exp.string() + "\" --seed 3 --out \"" + (out / "val").string() + "\"").code == 0);
  const json v = load(out / "val" / "coverage.json");
  CHECK(v["rows"].size() == 2);
  CHECK(fs::exists(out / "val" / "coverage.csv"));
  CHECK(run("validate --replicates 3").code != 0);
}

TEST_CASE("cate with a categorical moderator uses one coefficient per level") {
  const auto cfg = edited_config("levels", [](json& c) {
    c["cate"] = {{"moderator_csv", "moderators.csv"}, {"moderator_name", "zone"}, {"pixel_factor", 4}, {"basis", "levels"}};
  });
  {
    std::ofstream csv(cfg.parent_path() / "moderators.csv");
    csv << "row,col,t,name,value\n";
    for (int t = 1; t <= 150; ++t) {
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) csv << r << "," << c << "," << t << ",zone," << std::min(r, 2) << "\n";
      }
    }
  }
  const fs::path out = cfg.parent_path() / "out";
  const auto r = run("cate --config \"" + cfg.string() + "\" --out \"" + out.string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const json j = load(out / "results.json");
  REQUIRE(!j["results"]["projections"].empty());
  for (const auto& p : j["results"]["projections"]) {
    CHECK(p["basis"]["type"] == "levels");
    CHECK(p["curve"].size() == 3);
  }
}
