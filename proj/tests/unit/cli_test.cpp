#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "qmeter/experiment.hpp"
#include "test_support.hpp"

using namespace qmeter;
namespace fs = std::filesystem;

namespace {

json quantum_limit_config() {
  return json::parse(R"({
    "scenario": "quantum-limit",
    "seed": 7,
    "model": {"kind": "damped-oscillator", "m": 1.0, "omega0": 1.0, "gamma": 0.1},
    "omega": {"min": 0.5, "max": 1.5, "points": 5}
  })");
}

std::string config_error_path(const json& j) {
  try {
    run_experiment(j, {qmeter::testing::scratch_dir("cli-config"), 1});
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QMETER_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Config, MissingOrInvalidFieldsNameTheirPath) {
  json j = quantum_limit_config();
  j.erase("seed");
  EXPECT_EQ(config_error_path(j), "seed");

  j = quantum_limit_config();
  j["seed"] = -3;
  EXPECT_EQ(config_error_path(j), "seed");

  j = quantum_limit_config();
  j["scenario"] = "teleport";
  EXPECT_EQ(config_error_path(j), "scenario");

  j = quantum_limit_config();
  j["colour"] = "blue";
  EXPECT_EQ(config_error_path(j), "colour");

  j = quantum_limit_config();
  j["model"]["m"] = -1.0;
  EXPECT_EQ(config_error_path(j), "model.m");

  j = quantum_limit_config();
  j["model"]["kind"] = "pendulum";
  EXPECT_EQ(config_error_path(j), "model.kind");
}

TEST(Config, HashIsStableAndContentSensitive) {
  const json a = quantum_limit_config();
  json b = a;
  EXPECT_EQ(config::hash(a), config::hash(b));
  b["seed"] = 8;
  EXPECT_NE(config::hash(a), config::hash(b));
  EXPECT_EQ(config::hash(a).size(), 16u);
}

TEST(Report, RenderingIsDeterministic) {
  const auto dir = qmeter::testing::scratch_dir("report");
  const RunReport a = run_experiment(quantum_limit_config(), {dir / "a", 1});
  const RunReport b = run_experiment(quantum_limit_config(), {dir / "b", 1});
  EXPECT_TRUE(a.passed());
  EXPECT_EQ(emit_report(a, ReportFormat::kJson), emit_report(b, ReportFormat::kJson));
  EXPECT_EQ(emit_report(a, ReportFormat::kText), emit_report(b, ReportFormat::kText));
  EXPECT_EQ(emit_report(a, ReportFormat::kJson).find("wall_time"), std::string::npos);
  EXPECT_NE(emit_report(a, ReportFormat::kText, true).find("wall_time"), std::string::npos);
  for (const auto& name : a.artifacts) EXPECT_TRUE(fs::exists(dir / "a" / name)) << name;
}

TEST(Report, FailingChecksComeFirstAndExclusionsAreListed) {
  RunReport r;
  r.scenario = "demo";
  r.config_hash = "0";
  r.at_most("fine", 1.0, 2.0);
  r.at_most("broken", 3.0, 2.0);
  r.exclusions.push_back({200.0, "sin(phi) below threshold"});
  EXPECT_FALSE(r.passed());
  const std::string text = emit_report(r, ReportFormat::kText);
  EXPECT_LT(text.find("FAIL broken"), text.find("pass fine"));
  EXPECT_NE(text.find("omega=200 sin(phi) below threshold"), std::string::npos);
  const json j = json::parse(emit_report(r, ReportFormat::kJson));
  EXPECT_FALSE(j.at("passed").get<bool>());
  EXPECT_EQ(j.at("exclusions").at(0).at("reason"), "sin(phi) below threshold");
}

TEST(Cli, ExitCodes) {
  const auto dir = qmeter::testing::scratch_dir("cli");
  write_json(dir / "ok.json", quantum_limit_config());
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string() + " --out " + (dir / "ok").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "ok" / "optimum.csv"));

  json bad = quantum_limit_config();
  bad.erase("seed");
  write_json(dir / "bad.json", bad);
  EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + (dir / "ok.json").string() + " --format yaml"), 2);

  // A reference value the physics cannot meet is a numerical failure.
  json wrong = quantum_limit_config();
  wrong["reference"] = {{"omega", 1.0}, {"s_qq", 5.0}, {"s_ff", 0.05}, {"s_qf", 0.0}, {"min_added", 9.0}};
  write_json(dir / "wrong.json", wrong);
  EXPECT_EQ(run_cli("run --config " + (dir / "wrong.json").string() + " --out " + (dir / "wrong").string()), 1);
  EXPECT_TRUE(fs::exists(dir / "wrong" / "report.json"));
}

TEST(Cli, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(QMETER_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const json j = load_config(entry.path());
    EXPECT_NO_THROW(config::seed(j)) << entry.path();
    EXPECT_NO_THROW(config::model(j)) << entry.path();
  }
}
