#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "setkkl/errors.hpp"
#include "setkkl/harness.hpp"

using namespace setkkl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("setkkl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json static_config(const fs::path& out) {
  return {{"system", "static"},
          {"pair", {{"n_o", 1}, {"eigenvalues", {-1.0}}}},
          {"observer", {{"x0", {0.5}}, {"horizon", 0.2}, {"decimation", 20}}},
          {"output_dir", out.string()}};
}

json limit_cycle_config(const fs::path& out) {
  return {{"system", "limit_cycle_squared_output"},
          {"domain", {{"kind", "annulus"}, {"center", {0, 0}}, {"r_inner", 0.5}, {"r_outer", 1.7}, {"resolution", 8}}},
          {"pair", {{"n_o", 3}, {"eigenvalues", {-1, -2, -3}}}},
          {"observer",
           {{"x0", {1.2, 0}}, {"horizon", 0.3}, {"decimation", 50}, {"noise", {{"kind", "uniform"}, {"amplitude", 0.01}}}}},
          {"output_dir", out.string()}};
}

std::string config_error(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SETKKL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("parse_config: required fields are named") {
  json doc = static_config("out");
  doc["pair"].erase("eigenvalues");
  CHECK(config_error(doc).find("'pair.eigenvalues'") != std::string::npos);
  doc = static_config("out");
  doc.erase("system");
  CHECK(config_error(doc).find("'system'") != std::string::npos);
  doc = static_config("out");
  doc["pair"]["k"] = "fast";
  CHECK(config_error(doc).find("'pair.k'") != std::string::npos);
  doc = static_config("out");
  doc["observer"]["noise"] = {{"kind", "uniform"}, {"amplitude", -1}};
  CHECK_FALSE(config_error(doc).empty());
  doc = static_config("out");
  doc["domain"] = {{"kind", "annulus"}, {"center", {0}}, {"r_inner", 1.0}, {"r_outer", 0.5}};
  CHECK_FALSE(config_error(doc).empty());
}

TEST_CASE("parse_config: eigenvalues as reals or pairs, defaults") {
  json doc = static_config("out");
  doc["pair"]["n_o"] = 3;
  doc["pair"]["eigenvalues"] = json::array({json::array({-1, 2}), json::array({-1, -2}), -0.5});
  const auto cfg = parse_config(doc);
  REQUIRE(cfg.eigenvalues.size() == 3);
  CHECK(cfg.eigenvalues[0] == std::complex<double>(-1, 2));
  CHECK(cfg.eigenvalues[2] == std::complex<double>(-0.5, 0));
  CHECK(cfg.k == 1.0);
  CHECK(cfg.tol_trunc == 1e-6);
  CHECK(cfg.step == 1e-3);
  CHECK(cfg.obs_horizon == 0.2);
  CHECK_FALSE(cfg.domain.has_value());
}

TEST_CASE("load_config: parse errors and missing files") {
  const fs::path dir = scratch("load");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{\"system\": \"static\",\n  \"pair\": [}";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), ConfigError);
  try {
    load_config(dir / "bad.json");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("shipped configs load and build") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(SETKKL_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    const auto cfg = load_config(entry.path());
    CHECK_NOTHROW(build_pipeline(cfg));
    ++n;
  }
  CHECK(n > 0);
}

TEST_CASE("build_pipeline: cutoff defaults and unknown systems") {
  auto cfg = parse_config(limit_cycle_config("out"));
  const auto p = build_pipeline(cfg);
  CHECK(p.cut.cutoff->r_keep == doctest::Approx(1.7));
  CHECK(p.cut.cutoff->r_zero == doctest::Approx(2.55));
  CHECK(p.domain.kind == DomainKind::annulus);
  cfg.system = "nonesuch";
  CHECK_THROWS_AS(build_pipeline(cfg), UnknownExample);
}

TEST_CASE("cmd_transform_build: static map has unit conditioning") {
  const fs::path out = scratch("build");
  const auto res = cmd_transform_build(parse_config(static_config(out)));
  CHECK(res.summary["max_cond"].get<double>() == doctest::Approx(1.0));
  CHECK(res.summary["full_rank"].get<bool>());
  for (const char* f : {"atlas.csv", "conditioning.csv", "summary.json", "meta.json"}) CHECK(fs::exists(out / f));
  const json meta = json::parse(slurp(out / "meta.json"));
  CHECK(meta["config"]["pair"]["eigenvalues"][0] == -1.0);
  CHECK(meta["config"]["inversion"]["residual_tol"].get<double>() == doctest::Approx(1e-5));
  CHECK(meta["config"]["transform"]["horizon"].get<double>() > 0);
}

TEST_CASE("cmd_observe: artifacts and a single row for a zero horizon") {
  const fs::path out = scratch("observe0");
  json doc = static_config(out);
  doc["observer"]["horizon"] = 0;
  cmd_observe(parse_config(doc));
  const std::string csv = slurp(out / "run.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(fs::exists(out / "estimates.csv"));
  CHECK(fs::exists(out / "meta.json"));
  doc["observer"].erase("x0");
  CHECK_THROWS_AS(cmd_observe(parse_config(doc)), ConfigError);
}

TEST_CASE("cmd_observe: byte-identical reruns with a fixed seed") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  auto ca = parse_config(limit_cycle_config(a));
  auto cb = parse_config(limit_cycle_config(b));
  apply_seed(ca, 17);
  apply_seed(cb, 17);
  cmd_observe(ca);
  cmd_observe(cb);
  CHECK(slurp(a / "run.csv") == slurp(b / "run.csv"));
  CHECK(slurp(a / "estimates.csv") == slurp(b / "estimates.csv"));
}

TEST_CASE("cmd_diagnose: toggles off writes only meta.json") {
  const fs::path out = scratch("diag0");
  const auto res = cmd_diagnose(parse_config(static_config(out)));
  REQUIRE(res.files.size() == 1);
  CHECK(res.files[0].filename() == "meta.json");
}

TEST_CASE("cmd_diagnose: static map diagnostics") {
  const fs::path out = scratch("diag");
  json doc = static_config(out);
  doc["diagnostics"] = {{"cardinality", true}, {"characterization", true}, {"rank_map", true}, {"k_sweep", {1, 2}}};
  const auto res = cmd_diagnose(parse_config(doc));
  CHECK(res.summary["cardinality"]["modal_p"] == 1);
  CHECK(res.summary["characterization"]["pass"].get<bool>());
  CHECK(res.summary["rank_map"]["deficient"].empty());
  for (const char* f : {"cardinality.csv", "indist.csv", "observability.csv", "ksweep.csv", "meta.json"})
    CHECK(fs::exists(out / f));
}

TEST_CASE("CLI exit codes") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  json doc = static_config(dir / "out");
  std::ofstream(dir / "ok.json") << doc.dump();
  doc["pair"].erase("eigenvalues");
  std::ofstream(dir / "missing.json") << doc.dump();
  doc = static_config(dir / "out");
  doc["pair"]["eigenvalues"] = {-1.0, -1.0};
  doc["pair"]["n_o"] = 2;
  std::ofstream(dir / "repeated.json") << doc.dump();
  const std::string base = " --quiet --config " + (dir).string();
  CHECK(run_cli("transform-build" + base + "/ok.json") == 0);
  CHECK(run_cli("transform-build" + base + "/missing.json") == 2);
  CHECK(run_cli("transform-build" + base + "/repeated.json") == 2);
  CHECK(run_cli("bogus-command") == 2);
  CHECK(fs::exists(dir / "out" / "atlas.csv"));
}
