#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "experiment.hpp"

using namespace fkstab;
using cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fkstab_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int sh(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(FKSTAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string config_error_of(const std::string& text) {
  try {
    cli::run_experiment(json::parse(text));
  } catch (const cli::config_error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Schema, UnknownKeysReportPath) {
  EXPECT_EQ(config_error_of(R"({"command":"eigen","model":{"name":"harmonic","parms":{}}})"),
            "/model/parms: unknown key");
  EXPECT_EQ(config_error_of(R"({"command":"eigen","colour":1})"), "/colour: unknown key");
  EXPECT_EQ(config_error_of(R"({"command":"eigen","model":{"name":"harmonic"},"grid":{"min":-1,"max":1,"N":4}})"),
            "/grid/N: unknown key");
  EXPECT_EQ(config_error_of(R"({"command":"geometry","geometry":{"op":"shape","surface":"parabola","thetta":[0]}})"),
            "/geometry/thetta: unknown key");
}

TEST(Schema, TypeAndValueErrors) {
  EXPECT_EQ(config_error_of(R"({"command":"fly"})"), "/command: unknown command 'fly'");
  EXPECT_EQ(config_error_of(R"({"model":{}})"), "/command: required key missing");
  EXPECT_EQ(config_error_of(R"({"command":"eigen","model":{"name":"harmonic"},"time":{"tau":"x"}})"),
            "/time/tau: expected a number");
  EXPECT_EQ(config_error_of(R"({"command":"eigen","model":{"name":"harmonic"},"threads":0})"),
            "/threads: must be >= 1");
  EXPECT_EQ(config_error_of(R"({"command":"eigen","model":{"name":"harmonic"},"geometry":{}})"),
            "/geometry: section not used by command 'eigen'");
  EXPECT_NE(config_error_of(R"({"command":"eigen","model":{"name":"zeta"}})").find("available: harmonic"),
            std::string::npos);
  EXPECT_EQ(config_error_of(R"({"command":"riccati","riccati":{"kind":"matrix","A":[[1,2],[3]],"R":1,"S":1}})"),
            "/riccati/A/1: ragged row");
  EXPECT_EQ(config_error_of(R"({"command":"validate","validate":{"cases":["nope"]}})"),
            "/validate/cases/0: unknown case 'nope'");
  EXPECT_EQ(config_error_of(R"({"command":"geometry","geometry":{"op":"shape","surface":"parabola","theta":[0]},
                                "expect":{"nothing":{"value":0,"tol":1}}})"),
            "/expect/nothing: no numeric result of that name");
}

TEST(Format, SeventeenSignificantDigitsRoundTrip) {
  for (double v : {M_PI, -1e-300, 1.0 / 3, 6.02214076e23, 0.1}) {
    std::string s = cli::format_double(v);
    EXPECT_EQ(std::stod(s), v) << s;
    EXPECT_NE(s.find('e'), std::string::npos);
  }
  EXPECT_EQ(cli::format_double(-2), "-2.0000000000000000e+00");
}

TEST(Format, JsonLayoutAndCsvHeader) {
  cli::Report r;
  r.inputs = {{"seed", 3}};
  r.results["x"] = 0.5;
  r.results["v"] = json::array({1.0, 2.0});
  r.check("ok", 1, 2);
  std::string text = cli::render_json(r);
  auto back = json::parse(text);
  EXPECT_EQ(back["results"]["x"].get<double>(), 0.5);
  EXPECT_EQ(back["assertions"][0]["pass"].get<bool>(), true);
  EXPECT_NE(text.find("5.0000000000000000e-01"), std::string::npos);
  cli::Curve c{{"t", "value"}, {{0, 1}, {1, 0.5}}};
  auto csv = cli::render_csv(c);
  EXPECT_EQ(csv.substr(0, 8), "t,value\n");
  c.rows.push_back({2, NAN});
  EXPECT_THROW(cli::render_csv(c), error);
}

TEST(RunExperiment, EigenDirichletExample) {
  auto rep = cli::run_experiment(json::parse(
      R"({"command":"eigen","model":{"name":"dirichlet_heat"},"grid":{"min":0,"max":1,"n":200},"time":{"tau":0.5}})"));
  EXPECT_NEAR(rep.results["rho"].get<double>(), -M_PI * M_PI / 2, 1e-2);
  EXPECT_NEAR(rep.results["rho"].get<double>(), -4.9348, 1e-4);
  EXPECT_TRUE(rep.passed());
  ASSERT_TRUE(rep.curve.has_value());
  EXPECT_EQ(rep.curve->rows.size(), 200u);
}

TEST(RunExperiment, GeometryShapeExample) {
  auto rep = cli::run_experiment(
      json::parse(R"({"command":"geometry","geometry":{"op":"shape","surface":"parabola","theta":[0]}})"));
  EXPECT_DOUBLE_EQ(rep.results["W"][0][0].get<double>(), -2.0);
  EXPECT_TRUE(rep.passed());
}

TEST(RunExperiment, ExpectationFailureIsAnAssertion) {
  auto rep = cli::run_experiment(json::parse(R"({"command":"geometry",
      "geometry":{"op":"shape","surface":"parabola","theta":[0]},
      "expect":{"trace_W":{"value":2,"tol":1e-3}}})"));
  EXPECT_FALSE(rep.passed());
  EXPECT_EQ(rep.assertions.back().name, "expect:trace_W");
  EXPECT_DOUBLE_EQ(rep.assertions.back().lhs, 4.0);
}

TEST(RunExperiment, RiccatiTanhAndCoupled) {
  auto rep = cli::run_experiment(json::parse(R"({"command":"riccati",
      "riccati":{"kind":"matrix","A":0,"R":1,"S":1},"time":{"t_max":2}})"));
  EXPECT_NEAR(rep.results["trace_final"].get<double>(), std::tanh(2.0), 1e-8);
  auto co = cli::run_experiment(json::parse(R"({"command":"riccati",
      "riccati":{"kind":"coupled","A":0,"Sigma":1,"S":1,"x":0.5},"time":{"t_max":30}})"));
  EXPECT_NEAR(co.results["rho_hat"].get<double>(), -0.5, 1e-8);
  EXPECT_TRUE(co.passed());
}

TEST(RunExperiment, SeedOverrideChangesSimulation) {
  json c = json::parse(R"({"command":"simulate",
      "simulate":{"potential":0.5,"x0":[0],"t":0.2,"n_particles":500,"dt":0.01},"seed":1})");
  auto a = cli::run_experiment(c), b = cli::run_experiment(c);
  cli::Overrides ov;
  ov.seed = 2;
  auto d = cli::run_experiment(c, ov);
  EXPECT_EQ(cli::render_json(a), cli::render_json(b));
  EXPECT_NE(a.results["Q1"].get<double>(), d.results["Q1"].get<double>());
  EXPECT_EQ(d.inputs["seed"].get<long>(), 2);
}

TEST(Binary, ExitCodes) {
  auto dir = scratch("exit");
  put(dir / "ok.json", R"({"command":"geometry","geometry":{"op":"shape","surface":"parabola","theta":[0]}})");
  put(dir / "fail.json", R"({"command":"geometry","geometry":{"op":"shape","surface":"parabola","theta":[0]},
                             "expect":{"trace_W":{"value":5,"tol":0.1}}})");
  put(dir / "bad.json", R"({"command":"eigen","model":{"name":"harmonic","parms":{}}})");
  put(dir / "broken.json", "{ not json");
  EXPECT_EQ(sh("run " + (dir / "ok.json").string() + " --out " + dir.string(), dir / "log"), 0);
  EXPECT_NE(slurp(dir / "log").find("geometry trace_W=-2.0000000000000000e+00"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "geometry.json"));
  EXPECT_EQ(sh("run " + (dir / "fail.json").string() + " --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(sh("run " + (dir / "bad.json").string(), dir / "log"), 1);
  EXPECT_NE(slurp(dir / "log").find("/model/parms"), std::string::npos);
  EXPECT_EQ(sh("run " + (dir / "broken.json").string(), dir / "log"), 1);
  EXPECT_EQ(sh("run " + (dir / "missing.json").string(), dir / "log"), 1);
  EXPECT_EQ(sh("frobnicate", dir / "log"), 1);
  EXPECT_EQ(sh("run " + (dir / "ok.json").string() + " --threads 0", dir / "log"), 1);
}

TEST(Binary, ListCommands) {
  auto dir = scratch("list");
  EXPECT_EQ(sh("list-models", dir / "log"), 0);
  EXPECT_NE(slurp(dir / "log").find("dirichlet_heat"), std::string::npos);
  EXPECT_NE(slurp(dir / "log").find("graph_example_8_4"), std::string::npos);
  EXPECT_EQ(sh("list-cases", dir / "log"), 0);
  EXPECT_NE(slurp(dir / "log").find("dirichlet_survival_t03"), std::string::npos);
}

TEST(Binary, ShippedConfigsRunAndRepeatByteIdentically) {
  auto dir = scratch("repeat");
  for (const char* name : {"eigen_dirichlet", "eigen_harmonic", "contract_mehler", "decay_mehler", "rate_polynomial",
                           "riccati_tanh", "riccati_coupled", "riccati_logistic", "geometry_shape",
                           "geometry_coarea", "simulate_harmonic"}) {
    fs::path cfg = fs::path(FKSTAB_CONFIG_DIR) / (std::string(name) + ".json");
    ASSERT_EQ(sh("run " + cfg.string() + " --out " + (dir / "a").string(), dir / "log"), 0) << name << slurp(dir / "log");
    ASSERT_EQ(sh("run " + cfg.string() + " --out " + (dir / "b").string(), dir / "log"), 0) << name;
    for (const char* ext : {".json", ".csv"}) {
      fs::path a = dir / "a" / (std::string(name) + ext), b = dir / "b" / (std::string(name) + ext);
      if (!fs::exists(a)) continue;
      EXPECT_EQ(slurp(a), slurp(b)) << name << ext;
    }
  }
}

TEST(Binary, CsvColumnsFinite) {
  auto dir = scratch("csv");
  fs::path cfg = fs::path(FKSTAB_CONFIG_DIR) / "simulate_harmonic.json";
  ASSERT_EQ(sh("run " + cfg.string() + " --out " + dir.string(), dir / "log"), 0);
  std::ifstream f(dir / "simulate_harmonic.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "t,value,stderr");
  int rows = 0;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) EXPECT_TRUE(std::isfinite(std::stod(cell))) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 20);
}

TEST(RunExperiment, CustomPolynomialSurfaces) {
  auto curve = cli::run_experiment(json::parse(R"({"command":"geometry",
      "geometry":{"op":"shape","surface":{"coeffs":[0,0,1],"lo":-2,"hi":2},"theta":[0]}})"));
  EXPECT_NEAR(curve.results["trace_W"].get<double>(), -2.0, 1e-12);
  auto bowl = cli::run_experiment(json::parse(R"({"command":"geometry",
      "geometry":{"op":"shape","surface":{"terms":[[1,2,0],[1,0,2]],"lo":[-1,-1],"hi":[1,1]},"theta":[0,0]}})"));
  EXPECT_NEAR(bowl.results["trace_W"].get<double>(), -4.0, 1e-12);
  EXPECT_EQ(config_error_of(R"({"command":"geometry",
      "geometry":{"op":"shape","surface":{"terms":[[1,2.5,0]],"lo":[-1,-1],"hi":[1,1]},"theta":[0,0]}})"),
            "/geometry/surface/terms/0: exponents must be integers >= 0");
}
