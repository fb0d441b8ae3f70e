// SPDX-License-Identifier: Apache-2.0
//
// coretune - subset-based hyper-parameter tuning CLI.
//
// Verbs:
//   tune    - run one strategy end to end, write report.json/trials.csv/trace.jsonl
//   compare - run the configured strategies x fractions, write scatter.csv
//   oracle  - run the brute-force verification suites
//   report  - summarize an existing run directory into plot-ready CSV
//
// Exit codes: 0 success, 1 oracle suite failure, 2 configuration error,
// 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "coretune/oracle.hpp"
#include "coretune/tuner.hpp"

namespace fs = std::filesystem;
using namespace coretune;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "runs/out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

ExperimentConfig load_config(const CommonArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) throw ConfigError("cannot open config file: " + args.config_path);
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("invalid JSON in " + args.config_path + ": " + e.what());
  }
  for (const std::string& kv : args.overrides) apply_override(j, kv);
  if (args.seed) j["seed"] = *args.seed;
  if (args.workers) j["workers"] = *args.workers;
  return parse_experiment_config(j);
}

int cmd_tune(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  StrategyRunResult result;
  try {
    result = tune(cfg);
  } catch (const AllTrialsFailed& e) {
    fs::create_directories(args.out_dir);
    write_trace_jsonl(e.trace(), args.out_dir + "/trace.jsonl");
    throw std::runtime_error(std::string(e.what()) + " at " + args.out_dir + "/trace.jsonl");
  }
  write_run_artifacts(args.out_dir, cfg, result);
  std::cout << "tune ok strategy=" << result.strategy << " fraction=" << result.fraction
            << " best_trial=" << result.best_trial << " test_accuracy=" << result.final_test_accuracy
            << " total_cost=" << result.total_cost << " out=" << args.out_dir << "\n";
  return 0;
}

int cmd_compare(const CommonArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const CompareResult result = compare_strategies(cfg);
  fs::create_directories(args.out_dir);
  for (const StrategyRunResult& run : result.runs) {
    std::ostringstream dir;
    dir << args.out_dir << '/' << run.strategy;
    if (run.strategy != "full") dir << '_' << static_cast<int>(std::lround(run.fraction * 100.0)) << "pct";
    ExperimentConfig echo = cfg;
    echo.strategy.strategy = selection_strategy_from_string(run.strategy);
    echo.strategy.fraction = run.fraction;
    write_run_artifacts(dir.str(), echo, run);
  }
  write_scatter_csv(args.out_dir + "/scatter.csv", result.rows);
  // Smaller fractions usually buy larger speedups; flag inversions, they are
  // legitimate (selection overhead, batch rounding) but worth a look.
  for (const CompareRow& a : result.rows) {
    for (const CompareRow& b : result.rows) {
      if (a.strategy == b.strategy && a.fraction < b.fraction && a.speedup < b.speedup) {
        log_info("speedup ordering inversion: ", a.strategy, " fraction ", a.fraction, " -> ", a.speedup,
                 "x vs fraction ", b.fraction, " -> ", b.speedup, "x");
      }
    }
  }
  std::cout << "compare ok runs=" << result.runs.size() << " scatter=" << args.out_dir << "/scatter.csv\n";
  return 0;
}

int cmd_oracle(const std::vector<std::string>& suites, int instances, std::uint64_t seed) {
  const std::vector<std::string> all{"omp", "nnls", "grad", "hyperband", "asha"};
  const auto& names = suites.empty() ? all : suites;
  const auto results = oracle::run_suites(names, instances, seed);
  bool all_passed = true;
  for (const auto& r : results) {
    std::cerr << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.instances << " instances, "
              << r.seconds << "s): " << r.detail << "\n";
    all_passed = all_passed && r.passed;
  }
  std::cout << "oracle " << (all_passed ? "ok" : "FAILED") << " suites=" << results.size() << "\n";
  return all_passed ? 0 : 1;
}

int cmd_report(const std::string& dir) {
  // Collect per-run reports under dir (directly or one level deep) and emit
  // the scatter-style CSV next to them.
  std::vector<fs::path> reports;
  if (fs::exists(fs::path(dir) / "report.json")) reports.push_back(fs::path(dir) / "report.json");
  if (fs::exists(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "report.json")) {
        reports.push_back(entry.path() / "report.json");
      }
    }
  }
  if (reports.empty()) throw ConfigError("no report.json found under " + dir);
  std::sort(reports.begin(), reports.end());

  std::vector<CompareRow> rows;
  std::optional<double> full_cost;
  std::optional<double> full_accuracy;
  for (const auto& path : reports) {
    std::ifstream in(path);
    const ojson j = ojson::parse(in);
    CompareRow row;
    row.strategy = j.at("strategy").get<std::string>();
    row.fraction = j.at("fraction").get<double>();
    row.test_accuracy = j.at("final_test_accuracy").get<double>();
    row.total_cost = j.at("cost").at("total").get<std::uint64_t>();
    rows.push_back(row);
    if (row.strategy == "full") {
      full_cost = static_cast<double>(row.total_cost);
      full_accuracy = row.test_accuracy;
    }
  }
  for (CompareRow& row : rows) {
    row.speedup = full_cost ? *full_cost / static_cast<double>(row.total_cost) : 1.0;
    row.relative_test_error_pct = full_accuracy ? (*full_accuracy - row.test_accuracy) * 100.0 : 0.0;
  }
  const std::string out_path = (fs::path(dir) / "scatter.csv").string();
  write_scatter_csv(out_path, rows);
  for (const CompareRow& r : rows) {
    std::cerr << r.strategy << " fraction=" << r.fraction << " speedup=" << r.speedup
              << " relative_test_error_pct=" << r.relative_test_error_pct << "\n";
  }
  std::cout << "report ok rows=" << rows.size() << " out=" << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subset-based hyper-parameter tuning"};
  app.require_subcommand(1);

  CommonArgs tune_args;
  CLI::App* tune_cmd = app.add_subcommand("tune", "run one tuning strategy");
  tune_cmd->add_option("--config", tune_args.config_path, "experiment config JSON")->required();
  tune_cmd->add_option("--out", tune_args.out_dir, "output directory");
  tune_cmd->add_option("--set", tune_args.overrides, "dotted-path config override key=value");
  tune_cmd->add_option("--seed", tune_args.seed, "master seed override");
  tune_cmd->add_option("--workers", tune_args.workers, "virtual worker count");

  CommonArgs compare_args;
  CLI::App* compare_cmd = app.add_subcommand("compare", "run strategies against the full baseline");
  compare_cmd->add_option("--config", compare_args.config_path, "experiment config JSON")->required();
  compare_cmd->add_option("--out", compare_args.out_dir, "output directory");
  compare_cmd->add_option("--set", compare_args.overrides, "dotted-path config override key=value");
  compare_cmd->add_option("--seed", compare_args.seed, "master seed override");
  compare_cmd->add_option("--workers", compare_args.workers, "virtual worker count");

  std::vector<std::string> oracle_suites;
  int oracle_instances = 0;
  std::uint64_t oracle_seed = 7;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "run verification suites");
  oracle_cmd->add_option("--suite", oracle_suites, "suite name (omp|nnls|grad|hyperband|asha); default all");
  oracle_cmd->add_option("--instances", oracle_instances, "fuzz instance count (0 = suite default)");
  oracle_cmd->add_option("--seed", oracle_seed, "fuzz seed");

  std::string report_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "summarize run directories into scatter.csv");
  report_cmd->add_option("--out", report_dir, "run directory to summarize")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (tune_cmd->parsed()) return cmd_tune(tune_args);
    if (compare_cmd->parsed()) return cmd_compare(compare_args);
    if (oracle_cmd->parsed()) return cmd_oracle(oracle_suites, oracle_instances, oracle_seed);
    if (report_cmd->parsed()) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
