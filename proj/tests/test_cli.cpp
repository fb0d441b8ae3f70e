// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string stdout_text;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(CORETUNE_CLI_PATH) + " " + args + " 2>/dev/null";
  std::array<char, 4096> buf{};
  CommandResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) result.stdout_text += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string tiny_config_path() {
  static const std::string path = [] {
    const std::string p = "/tmp/coretune_cli_config.json";
    std::ofstream out(p);
    out << R"json({
      "dataset": {"kind": "synthetic", "preset": "dna", "seed": 13},
      "space": {
        "lr": {"kind": "log_uniform", "lo": 0.001, "hi": 0.01},
        "optimizer": {"kind": "choice", "values": ["adam", "sgd"]},
        "h1": {"kind": "int_choice", "values": [16, 24]},
        "h2": {"kind": "int_choice", "values": [16, 24]},
        "batch": {"kind": "int_choice", "values": [32, 64]}
      },
      "searcher": {"kind": "random"},
      "scheduler": {"kind": "sha", "eta": 3, "min_resource": 1, "max_resource": 3},
      "strategy": {"kind": "gss", "fraction": 0.1},
      "n": 4, "T": 4, "R": 2,
      "seed": 7, "workers": 1,
      "compare": {"strategies": ["full", "gss"], "fractions": [0.1]}
    })json";
    return p;
  }();
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("tune writes the three run artifacts and exits 0") {
  const std::string out = "/tmp/coretune_cli_tune";
  fs::remove_all(out);
  const CommandResult r = run_cli("tune --config " + tiny_config_path() + " --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(r.stdout_text.find("tune ok") == 0);
  CHECK(fs::exists(fs::path(out) / "report.json"));
  CHECK(fs::exists(fs::path(out) / "trials.csv"));
  CHECK(fs::exists(fs::path(out) / "trace.jsonl"));
}

TEST_CASE("tune with a missing config exits 2") {
  const CommandResult r = run_cli("tune --config /tmp/definitely_missing_config.json --out /tmp/x");
  CHECK(r.exit_code == 2);
}

TEST_CASE("invalid config values exit 2") {
  const std::string p = "/tmp/coretune_cli_bad.json";
  {
    std::ofstream out(p);
    out << R"({"space": {"lr": {"kind": "uniform", "lo": 1.0, "hi": 0.5}}})";
  }
  const CommandResult r = run_cli("tune --config " + p + " --out /tmp/x");
  CHECK(r.exit_code == 2);
}

TEST_CASE("set overrides show up in the report's resolved config echo") {
  const std::string out = "/tmp/coretune_cli_override";
  fs::remove_all(out);
  const CommandResult r =
      run_cli("tune --config " + tiny_config_path() + " --out " + out + " --set strategy.fraction=0.3");
  CHECK(r.exit_code == 0);
  const auto report = nlohmann::json::parse(slurp(fs::path(out) / "report.json"));
  CHECK(report.at("config").at("strategy").at("fraction").get<double>() == 0.3);
  CHECK(report.at("fraction").get<double>() == 0.3);
}

TEST_CASE("tune runs are byte-identical across repeats") {
  const std::string out_a = "/tmp/coretune_cli_det_a";
  const std::string out_b = "/tmp/coretune_cli_det_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  REQUIRE(run_cli("tune --config " + tiny_config_path() + " --out " + out_a).exit_code == 0);
  REQUIRE(run_cli("tune --config " + tiny_config_path() + " --out " + out_b).exit_code == 0);
  CHECK(slurp(fs::path(out_a) / "report.json") == slurp(fs::path(out_b) / "report.json"));
  CHECK(slurp(fs::path(out_a) / "trials.csv") == slurp(fs::path(out_b) / "trials.csv"));
  CHECK(slurp(fs::path(out_a) / "trace.jsonl") == slurp(fs::path(out_b) / "trace.jsonl"));
}

TEST_CASE("compare emits scatter.csv with the full baseline at speedup 1") {
  const std::string out = "/tmp/coretune_cli_compare";
  fs::remove_all(out);
  const CommandResult r = run_cli("compare --config " + tiny_config_path() + " --out " + out);
  CHECK(r.exit_code == 0);
  const std::string scatter = slurp(fs::path(out) / "scatter.csv");
  std::istringstream in(scatter);
  std::string header, full_row;
  REQUIRE(std::getline(in, header));
  CHECK(header == "strategy,fraction,speedup,relative_test_error_pct,test_accuracy,total_cost");
  REQUIRE(std::getline(in, full_row));
  CHECK(full_row.rfind("full,1,1,", 0) == 0);  // speedup exactly 1, error 0
  std::size_t rows = 1;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);  // full + gss at one fraction
  CHECK(fs::exists(fs::path(out) / "gss_10pct" / "report.json"));
}

TEST_CASE("report verb rebuilds scatter.csv from run directories") {
  const std::string out = "/tmp/coretune_cli_compare";  // reuse compare output
  REQUIRE(fs::exists(fs::path(out) / "full" / "report.json"));
  fs::remove(fs::path(out) / "scatter.csv");
  const CommandResult r = run_cli("report --out " + out);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(fs::path(out) / "scatter.csv"));
  CHECK(r.stdout_text.find("report ok") == 0);
}

TEST_CASE("oracle verb runs all five suites by default") {
  const CommandResult r = run_cli("oracle --instances 25 --seed 3");
  CHECK(r.exit_code == 0);
  CHECK(r.stdout_text.find("oracle ok suites=5") == 0);
}

TEST_CASE("oracle accepts suite selection and instance counts") {
  const CommandResult r = run_cli("oracle --suite omp --instances 50");
  CHECK(r.exit_code == 0);
  CHECK(r.stdout_text.find("suites=1") != std::string::npos);
  const CommandResult bad = run_cli("oracle --suite nosuch");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("unknown verbs exit 2") {
  const CommandResult r = run_cli("frobnicate");
  CHECK(r.exit_code == 2);
}

TEST_CASE("tune saves a loadable final model checkpoint") {
  const std::string out = "/tmp/coretune_cli_tune";  // reuse earlier run dir
  REQUIRE(fs::exists(fs::path(out) / "report.json"));
  CHECK(fs::exists(fs::path(out) / "model.ckpt"));
}

TEST_CASE("select_debug emits one selection record per event") {
  const std::string out = "/tmp/coretune_cli_seldebug";
  fs::remove_all(out);
  const CommandResult r =
      run_cli("tune --config " + tiny_config_path() + " --out " + out + " --set select_debug=true");
  REQUIRE(r.exit_code == 0);
  const fs::path log = fs::path(out) / "selections.jsonl";
  REQUIRE(fs::exists(log));
  std::ifstream in(log);
  std::string line;
  std::size_t events = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("trial"));
    CHECK(j.contains("epoch"));
    CHECK(j.at("batch_indices").size() == j.at("weights").size());
    CHECK(j.at("residual_norm").get<double>() >= 0.0);
    ++events;
  }
  CHECK(events > 0);
}

TEST_CASE("the T=200 tabular preset completes and emits a report") {
  const std::string config = std::string(CORETUNE_CONFIG_DIR) + "/dna_t200.json";
  REQUIRE(fs::exists(config));
  const std::string out = "/tmp/coretune_cli_paper_protocol";
  fs::remove_all(out);
  const CommandResult r = run_cli("tune --config " + config + " --out " + out);
  CHECK(r.exit_code == 0);
  const auto report = nlohmann::json::parse(slurp(fs::path(out) / "report.json"));
  CHECK(report.at("config").at("T").get<int>() == 200);
  CHECK(report.at("config").at("R").get<int>() == 10);
  CHECK(report.at("final_test_accuracy").get<double>() > 0.9);
}

TEST_CASE("runtime failures exit 3 and leave the trace behind") {
  const std::string out = "/tmp/coretune_cli_fail";
  fs::remove_all(out);
  // Learning rates near the double overflow boundary take every trial's
  // parameters to +-inf on the first step and NaN on the next forward pass.
  const CommandResult r = run_cli("tune --config " + tiny_config_path() + " --out " + out +
                                  " --set space.lr.lo=1e299 --set space.lr.hi=1e300");
  CHECK(r.exit_code == 3);
  CHECK(fs::exists(fs::path(out) / "trace.jsonl"));
}
