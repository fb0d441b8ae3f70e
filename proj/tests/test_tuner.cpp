// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "coretune/tuner.hpp"

using namespace coretune;

namespace {

// Small dataset and budget so tuner integration cases run in seconds.
ojson tiny_config_json() {
  return ojson::parse(R"json({
    "dataset": {"kind": "synthetic", "preset": "dna", "seed": 13},
    "space": {
      "lr": {"kind": "log_uniform", "lo": 0.001, "hi": 0.01},
      "optimizer": {"kind": "choice", "values": ["adam", "sgd"]},
      "h1": {"kind": "int_choice", "values": [20, 30]},
      "h2": {"kind": "int_choice", "values": [20, 30]},
      "batch": {"kind": "int_choice", "values": [32, 64]}
    },
    "searcher": {"kind": "random"},
    "scheduler": {"kind": "sha", "eta": 3, "min_resource": 1, "max_resource": 4},
    "strategy": {"kind": "gss", "fraction": 0.1},
    "n": 6, "T": 6, "R": 2,
    "seed": 77, "workers": 1
  })json");
}

ExperimentConfig tiny_config() { return parse_experiment_config(tiny_config_json()); }

}  // namespace

TEST_CASE("warmstart epochs follow round(kappa*T*k/N) clamped to [0,T]") {
  CHECK(warmstart_epochs(0.0, 200, 0.1) == 0);
  CHECK(warmstart_epochs(0.35, 200, 0.1) == 7);
  CHECK(warmstart_epochs(1.0, 13, 1.0) == 13);
  CHECK(warmstart_epochs(0.35, 200, 140.0, 1400.0) == 7);
  CHECK(warmstart_epochs(1.0, 10, 10.0, 10.0) == 10);
  CHECK_THROWS_AS(warmstart_epochs(-0.1, 10, 0.5), ConfigError);
  CHECK_THROWS_AS(warmstart_epochs(1.1, 10, 0.5), ConfigError);
}

TEST_CASE("experiment config parsing, defaults, and echo") {
  const ExperimentConfig cfg = tiny_config();
  CHECK(cfg.n_configs == 6);
  CHECK(cfg.total_epochs == 6);
  CHECK(cfg.selection_interval == 2);
  CHECK(cfg.strategy.strategy == SelectionStrategy::gss);
  CHECK(cfg.resolved_kappa() == 0.0);  // sha default

  ojson asha = tiny_config_json();
  asha["scheduler"]["kind"] = "asha";
  CHECK(parse_experiment_config(asha).resolved_kappa() == 0.35);
  asha["strategy"]["kappa"] = 0.2;
  CHECK(parse_experiment_config(asha).resolved_kappa() == 0.2);

  const ojson echo = experiment_config_to_json(cfg);
  CHECK(echo.at("n") == 6);
  CHECK(echo.at("strategy").at("kind") == "gss");
  // space order preserved by the echo
  auto it = echo.at("space").begin();
  CHECK(it.key() == "lr");
}

TEST_CASE("experiment config validation rejects bad values") {
  ojson j = tiny_config_json();
  j["scheduler"]["max_resource"] = 100;  // exceeds T
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);

  j = tiny_config_json();
  j["metric"] = "test_accuracy";
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);

  j = tiny_config_json();
  j["strategy"]["kind"] = "craig";
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);

  j = tiny_config_json();
  j.erase("space");
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
}

TEST_CASE("config overrides take dotted paths with JSON or string values") {
  ojson j = tiny_config_json();
  apply_override(j, "strategy.fraction=0.3");
  apply_override(j, "searcher.kind=tpe");
  apply_override(j, "n=4");
  CHECK(j["strategy"]["fraction"] == 0.3);
  CHECK(j["searcher"]["kind"] == "tpe");
  CHECK(j["n"] == 4);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=5"), ConfigError);
}

TEST_CASE("run_trial_grant bills N samples per full-data epoch") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);
  const long n = data.train.n();

  Trial trial;
  trial.id = 0;
  trial.model = init_mlp({static_cast<int>(data.train.dim()), 16, 16, 3}, 5);
  OptimizerConfig oc;
  oc.lr = 0.005;
  trial.optimizer = std::make_unique<Optimizer>(oc);
  trial.plan = make_batches(data.train, 32, 6);

  TrialSchedule schedule{4, 2, 0.0};
  SelectionConfig full;
  full.strategy = SelectionStrategy::full;
  full.fraction = 1.0;
  run_trial_grant(trial, data.train, data.validation, schedule, full, 3, 99);
  CHECK(trial.epochs_done == 3);
  CHECK(trial.meter.sample_gradients == static_cast<std::uint64_t>(3 * n));
  CHECK(trial.meter.selection_units == 0);
  CHECK(trial.meter.eval_forwards == static_cast<std::uint64_t>(data.validation.n()));
  CHECK(trial.evaluated);
}

TEST_CASE("selection events happen at T_w and every R epochs after it") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);

  const auto run_schedule = [&](double kappa, int total, int interval, double fraction) {
    Trial trial;
    trial.id = 3;
    trial.model = init_mlp({static_cast<int>(data.train.dim()), 16, 16, 3}, 5);
    OptimizerConfig oc;
    oc.lr = 0.005;
    trial.optimizer = std::make_unique<Optimizer>(oc);
    trial.plan = make_batches(data.train, 32, 6);
    TrialSchedule schedule{total, interval, kappa};
    SelectionConfig sel;
    sel.strategy = SelectionStrategy::gss;
    sel.fraction = fraction;
    std::vector<SelectionLogEntry> log;
    run_trial_grant(trial, data.train, data.validation, schedule, sel, total, 123, false, &log);
    std::vector<int> epochs;
    for (const auto& e : log) epochs.push_back(e.epoch);
    return std::pair<std::vector<int>, Trial>{std::move(epochs), std::move(trial)};
  };

  SUBCASE("no warm start: initial selection at 0, refresh at R, 2R, ...") {
    const auto [epochs, trial] = run_schedule(0.0, 10, 3, 0.2);
    CHECK(epochs == std::vector<int>{0, 3, 6, 9});
  }
  SUBCASE("warm start delays the initial selection to T_w") {
    // kappa=1, T=10, fraction=0.4 -> T_w = 4; refreshes at 6, 8
    const auto [epochs, trial] = run_schedule(1.0, 10, 2, 0.4);
    CHECK(epochs == std::vector<int>{4, 6, 8});
    // warm epochs bill the full dataset, subset epochs roughly fraction*N
    const long n = load_experiment_dataset(cfg).train.n();
    CHECK(trial.meter.sample_gradients > static_cast<std::uint64_t>(4 * n));
    CHECK(trial.meter.sample_gradients < static_cast<std::uint64_t>(8 * n));
  }
}

TEST_CASE("selection cadence is invariant to grant boundaries") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);

  const auto run_grants = [&](const std::vector<int>& grants) {
    Trial trial;
    trial.id = 1;
    trial.model = init_mlp({static_cast<int>(data.train.dim()), 16, 16, 3}, 5);
    OptimizerConfig oc;
    oc.lr = 0.005;
    trial.optimizer = std::make_unique<Optimizer>(oc);
    trial.plan = make_batches(data.train, 32, 6);
    TrialSchedule schedule{6, 2, 0.0};
    SelectionConfig sel;
    sel.strategy = SelectionStrategy::gss;
    sel.fraction = 0.2;
    std::vector<SelectionLogEntry> log;
    for (const int g : grants) {
      run_trial_grant(trial, data.train, data.validation, schedule, sel, g, 9, false, &log);
    }
    std::vector<int> epochs;
    for (const auto& e : log) epochs.push_back(e.epoch);
    return epochs;
  };

  const auto one_big = run_grants({6});
  const auto sliced = run_grants({1, 2, 3});
  CHECK(one_big == std::vector<int>{0, 2, 4});
  CHECK(sliced == one_big);
}

TEST_CASE("warm-start epochs bill full data while subset epochs bill the fraction") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);
  const long n = data.train.n();

  Trial trial;
  trial.id = 0;
  trial.model = init_mlp({static_cast<int>(data.train.dim()), 16, 16, 3}, 5);
  OptimizerConfig oc;
  oc.lr = 0.005;
  trial.optimizer = std::make_unique<Optimizer>(oc);
  trial.plan = make_batches(data.train, 32, 6);

  // kappa=1, T=10, fraction=0.1 -> T_w = 1
  TrialSchedule schedule{10, 5, 1.0};
  SelectionConfig sel;
  sel.strategy = SelectionStrategy::gss;
  sel.fraction = 0.1;

  run_trial_grant(trial, data.train, data.validation, schedule, sel, 1, 7);
  const std::uint64_t warm_cost = trial.meter.sample_gradients;
  CHECK(warm_cost == static_cast<std::uint64_t>(n));

  run_trial_grant(trial, data.train, data.validation, schedule, sel, 1, 7);
  const std::uint64_t subset_cost = trial.meter.sample_gradients - warm_cost;
  CHECK(subset_cost < static_cast<std::uint64_t>(n) / 5);  // ~0.1*N
  CHECK(subset_cost > 0);
}

TEST_CASE("grants cannot exceed the epoch budget") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);
  Trial trial;
  trial.model = init_mlp({static_cast<int>(data.train.dim()), 8, 8, 3}, 5);
  trial.optimizer = std::make_unique<Optimizer>(OptimizerConfig{});
  trial.plan = make_batches(data.train, 32, 6);
  TrialSchedule schedule{4, 2, 0.0};
  SelectionConfig sel;
  sel.strategy = SelectionStrategy::full;
  CHECK_THROWS_AS(run_trial_grant(trial, data.train, data.validation, schedule, sel, 5, 7), ConfigError);
  CHECK_THROWS_AS(run_trial_grant(trial, data.train, data.validation, schedule, sel, 0, 7), ConfigError);
}

TEST_CASE("tune completes, reports, and is reproducible") {
  const ExperimentConfig cfg = tiny_config();
  const StrategyRunResult a = tune(cfg);
  CHECK(a.strategy == "gss");
  CHECK(a.best_trial >= 0);
  CHECK(a.final_trained);
  CHECK(a.final_test_accuracy > 0.4);
  CHECK(a.trials.size() == 6);
  CHECK(a.total_cost == a.tuning_cost + a.final_train_cost);

  const StrategyRunResult b = tune(cfg);
  CHECK(report_to_json(cfg, a).dump() == report_to_json(cfg, b).dump());
}

TEST_CASE("trial epoch accounting matches the trace and grant conservation") {
  const ExperimentConfig cfg = tiny_config();
  const StrategyRunResult res = tune(cfg);
  // sha(6,1,eta=3,rmax=4): rounds (6,1),(2,3) -> two trials reach 3 epochs
  std::map<int, int> finishes;
  for (const auto& ev : res.trace) {
    if (ev.event == "finish") ++finishes[ev.trial];
  }
  int deep = 0;
  for (const auto& t : res.trials) {
    CHECK(t.epochs <= cfg.scheduler.max_resource);
    if (t.epochs == 3) ++deep;
    CHECK(finishes[t.id] == t.max_rung + 1);  // one finish per rung reached
  }
  CHECK(deep == 2);
}

TEST_CASE("full and gss strategies draw identical configuration streams") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy.strategy = SelectionStrategy::full;
  cfg.strategy.fraction = 1.0;
  const StrategyRunResult full = tune(cfg);
  cfg.strategy.strategy = SelectionStrategy::gss;
  cfg.strategy.fraction = 0.1;
  const StrategyRunResult gss = tune(cfg);
  REQUIRE(full.trials.size() == gss.trials.size());
  for (std::size_t i = 0; i < full.trials.size(); ++i) {
    CHECK(std::get<double>(full.trials[i].config.at("lr")) == std::get<double>(gss.trials[i].config.at("lr")));
    CHECK(std::get<std::string>(full.trials[i].config.at("optimizer")) ==
          std::get<std::string>(gss.trials[i].config.at("optimizer")));
  }
}

TEST_CASE("degenerate single-config space selects that config") {
  ojson j = tiny_config_json();
  j["space"] = ojson{{"optimizer", ojson{{"kind", "choice"}, {"values", ojson::array({"sgd"})}}}};
  j["n"] = 1;
  const ExperimentConfig cfg = parse_experiment_config(j);
  const StrategyRunResult res = tune(cfg);
  CHECK(res.trials.size() == 1);
  CHECK(std::get<std::string>(res.best_config.at("optimizer")) == "sgd");
}

TEST_CASE("full strategy skips final training and bills every epoch at N") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy.strategy = SelectionStrategy::full;
  cfg.strategy.fraction = 1.0;
  const StrategyRunResult res = tune(cfg);
  CHECK_FALSE(res.final_trained);
  CHECK(res.final_train_cost == 0);

  const SplitResult data = load_experiment_dataset(cfg);
  std::uint64_t expected = 0;
  for (const auto& t : res.trials) expected += static_cast<std::uint64_t>(t.epochs) * data.train.n();
  CHECK(res.tuning_cost == expected);
}

TEST_CASE("final_train bills T*N sample gradients and is deterministic") {
  const ExperimentConfig cfg = tiny_config();
  const SplitResult data = load_experiment_dataset(cfg);
  ConfigSample best;
  best.values = {{"lr", 0.005},
                 {"optimizer", std::string("adam")},
                 {"h1", std::int64_t{16}},
                 {"h2", std::int64_t{16}},
                 {"batch", std::int64_t{32}}};
  const FinalTrainResult a = final_train(best, data, 4, 20, 9);
  CHECK(a.meter.sample_gradients == static_cast<std::uint64_t>(4 * data.train.n()));
  CHECK(a.meter.billable() == a.meter.sample_gradients);
  const FinalTrainResult b = final_train(best, data, 4, 20, 9);
  CHECK(a.test_report.accuracy == b.test_report.accuracy);
  CHECK(a.test_report.mean_loss == b.test_report.mean_loss);
}

TEST_CASE("cost dominance: subset tuning stays under the fraction bound") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy.strategy = SelectionStrategy::full;
  cfg.strategy.fraction = 1.0;
  const StrategyRunResult full = tune(cfg);
  cfg.strategy.strategy = SelectionStrategy::gss;
  cfg.strategy.fraction = 0.1;
  const StrategyRunResult gss = tune(cfg);
  // kappa = 0: tuning cost <= full tuning cost * fraction + selection
  // overhead (batch-granularity rounding allows a small slack factor).
  const double bound = static_cast<double>(full.tuning_cost) * cfg.strategy.fraction * 1.5 +
                       static_cast<double>(gss.selection_units);
  CHECK(static_cast<double>(gss.tuning_cost) <= bound);
}

TEST_CASE("compare_strategies pairs seeds and reports speedups against full") {
  ojson j = tiny_config_json();
  j["compare"] = ojson{{"strategies", ojson::array({"full", "gss", "random"})},
                       {"fractions", ojson::array({0.1, 0.3})}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const CompareResult result = compare_strategies(cfg);
  REQUIRE(result.rows.size() == 5);  // full + 2 strategies x 2 fractions
  CHECK(result.rows[0].strategy == "full");
  CHECK(result.rows[0].speedup == doctest::Approx(1.0));
  CHECK(result.rows[0].relative_test_error_pct == doctest::Approx(0.0));
  for (const auto& row : result.rows) CHECK(row.speedup > 0.0);
}

TEST_CASE("paper-fractions preset expands to the four published fractions") {
  ojson j = tiny_config_json();
  j["compare"] = ojson{{"strategies", ojson::array({"full", "gss"})}, {"fractions", "paper-fractions"}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  CHECK(cfg.compare.fractions == std::vector<double>{0.01, 0.05, 0.10, 0.30});
}

TEST_CASE("compare requires the full baseline") {
  ojson j = tiny_config_json();
  j["compare"] = ojson{{"strategies", ojson::array({"gss", "random"})}, {"fractions", ojson::array({0.1})}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  CHECK_THROWS_AS(compare_strategies(cfg), ConfigError);
}

TEST_CASE("gss at fraction 1.0 costs about the same as full") {
  ojson j = tiny_config_json();
  j["strategy"]["fraction"] = 1.0;
  ExperimentConfig cfg = parse_experiment_config(j);
  cfg.strategy.strategy = SelectionStrategy::full;
  const StrategyRunResult full = tune(cfg);
  cfg.strategy.strategy = SelectionStrategy::gss;
  cfg.strategy.fraction = 1.0;
  const StrategyRunResult gss = tune(cfg);
  // Same tuning epochs; gss adds selection overhead and the final training.
  const double ratio = static_cast<double>(gss.total_cost) /
                       (static_cast<double>(full.total_cost) + static_cast<double>(gss.final_train_cost));
  CHECK(ratio >= 0.9);
  CHECK(ratio <= 1.2);
}

TEST_CASE("scatter csv round trips") {
  std::vector<CompareRow> rows{{"full", 1.0, 1.0, 0.0, 0.97, 1000}, {"gss", 0.1, 3.5, 0.4, 0.966, 285}};
  const std::string path = "/tmp/coretune_test_scatter.csv";
  write_scatter_csv(path, rows);
  const auto parsed = read_scatter_csv(path);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].strategy == "gss");
  CHECK(parsed[1].fraction == doctest::Approx(0.1));
  CHECK(parsed[1].speedup == doctest::Approx(3.5));
  CHECK(parsed[1].relative_test_error_pct == doctest::Approx(0.4));
  CHECK(parsed[1].total_cost == 285);
}

TEST_CASE("alg2-literal flag starts from a random subset instead of an immediate fit") {
  ojson j = tiny_config_json();
  j["strategy"]["alg2_literal_init"] = true;
  const ExperimentConfig literal_cfg = parse_experiment_config(j);
  CHECK(literal_cfg.alg2_literal_init);

  const SplitResult data = load_experiment_dataset(literal_cfg);
  const auto first_selection = [&](bool literal) {
    Trial trial;
    trial.id = 0;
    trial.model = init_mlp({static_cast<int>(data.train.dim()), 16, 16, 3}, 5);
    trial.optimizer = std::make_unique<Optimizer>(OptimizerConfig{});
    trial.plan = make_batches(data.train, 32, 6);
    TrialSchedule schedule{6, 2, 0.0};
    SelectionConfig sel;
    sel.strategy = SelectionStrategy::gss;
    sel.fraction = 0.2;
    std::vector<SelectionLogEntry> log;
    run_trial_grant(trial, data.train, data.validation, schedule, sel, 1, 55, literal, &log);
    return log.front();
  };
  const SelectionLogEntry literal = first_selection(true);
  const SelectionLogEntry greedy = first_selection(false);
  // literal initial subset carries unit weights; the immediate fit does not
  bool all_unit = true;
  for (const double w : literal.weights) all_unit = all_unit && w == 1.0;
  CHECK(all_unit);
  bool greedy_unit = true;
  for (const double w : greedy.weights) greedy_unit = greedy_unit && w == 1.0;
  CHECK_FALSE(greedy_unit);
}

TEST_CASE("tune fails loudly when every trial fails") {
  ojson j = tiny_config_json();
  // Learning rates near the double overflow boundary force non-finite
  // losses on every trial's first steps.
  j["space"] = ojson{{"lr", ojson{{"kind", "uniform"}, {"lo", 1e299}, {"hi", 1e300}}}};
  j["n"] = 3;
  const ExperimentConfig cfg = parse_experiment_config(j);
  CHECK_THROWS_AS(tune(cfg), AllTrialsFailed);
}
