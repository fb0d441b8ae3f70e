// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coretune/coreset.hpp"
#include "coretune/dataio.hpp"
#include "coretune/model.hpp"
#include "coretune/scheduler.hpp"
#include "coretune/search.hpp"

namespace coretune {

using ojson = nlohmann::ordered_json;

struct TrialSchedule {
  int total_epochs = 200;       // T
  int selection_interval = 10;  // R
  double warm_frac = 0.0;       // kappa

  void validate() const;
};

/// T_w = round(kappa * T * k / N), clamped to [0, T].
int warmstart_epochs(double kappa, int total_epochs, double coreset_size, double train_size);
int warmstart_epochs(double kappa, int total_epochs, double fraction);

struct DatasetSpec {
  std::string kind = "synthetic";  // "synthetic" | "libsvm"
  std::string path;                // libsvm file
  std::string preset = "dna";      // synthetic preset
  std::uint64_t seed = 13;         // synthetic generator seed, independent of the run seed
  double val_frac = 0.1;
  double test_frac = 0.2;
  std::optional<long> val_size;    // exact split counts override the fractions
  std::optional<long> test_size;
  bool standardize = true;
};

struct CompareSpec {
  std::vector<std::string> strategies{"full", "gss", "random"};
  std::vector<double> fractions{0.01, 0.05, 0.10, 0.30};
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ParamSpace space;
  std::string searcher_kind = "random";
  TpeConfig tpe;
  SchedulerConfig scheduler;
  SelectionConfig strategy;
  std::optional<double> kappa;      // empty: 0 with sha/hyperband, 0.35 with asha
  bool alg2_literal_init = false;   // random initial subset, first refit at t=R
  int n_configs = 27;
  int total_epochs = 200;           // T
  int selection_interval = 10;      // R
  int default_batch_size = 20;      // used when the space has no "batch" domain
  std::string metric = "val_accuracy";  // or "val_loss"
  std::uint64_t seed = 1;
  int workers = 1;
  bool select_debug = false;
  CompareSpec compare;

  double resolved_kappa() const;
  void validate() const;
};

ExperimentConfig parse_experiment_config(const ojson& j);
ExperimentConfig load_experiment_config(const std::string& path);
ojson experiment_config_to_json(const ExperimentConfig& cfg);

/// Applies a `--set dotted.path=value` override; values parse as JSON when
/// possible and fall back to strings.
void apply_override(ojson& config, const std::string& key_value);

SplitResult load_experiment_dataset(const ExperimentConfig& cfg);

/// One configuration's lifecycle across scheduler grants.
struct Trial {
  int id = 0;
  ConfigSample config;
  MlpModel model;
  std::unique_ptr<Optimizer> optimizer;
  BatchPlan plan;
  std::optional<Coreset> coreset;
  int epochs_done = 0;
  int max_rung = 0;
  double last_val_accuracy = 0.0;
  double last_val_loss = std::numeric_limits<double>::infinity();
  bool evaluated = false;
  bool failed = false;
  CostMeter meter;
};

struct SelectionLogEntry {
  int trial = 0;
  int epoch = 0;
  std::vector<int> batch_indices;
  std::vector<double> weights;
  double residual_norm = 0.0;
};

/// Trains `grant_epochs` more epochs: full data while t < T_w, otherwise on
/// the current coreset, reselecting at T_w and at every multiple of R past
/// it; then evaluates once on the validation split. Throws on non-finite
/// losses (the caller marks the trial failed).
void run_trial_grant(Trial& trial, const Dataset& train, const Dataset& validation, const TrialSchedule& schedule,
                     const SelectionConfig& selection, int grant_epochs, std::uint64_t master_seed,
                     bool alg2_literal_init = false, std::vector<SelectionLogEntry>* selection_log = nullptr);

struct TrialRecord {
  int id = 0;
  ConfigSample config;
  int epochs = 0;
  int max_rung = 0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  std::uint64_t cost = 0;
  bool failed = false;
};

struct StrategyRunResult {
  std::string strategy;
  double fraction = 1.0;
  int best_trial = -1;
  ConfigSample best_config;
  double best_val_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  double final_test_loss = 0.0;
  bool final_trained = false;
  std::uint64_t tuning_cost = 0;       // sample gradients + selection units
  std::uint64_t selection_units = 0;
  std::uint64_t final_train_cost = 0;
  std::uint64_t total_cost = 0;        // tuning + final training
  std::uint64_t eval_forwards = 0;
  double makespan = 0.0;
  std::vector<TrialRecord> trials;
  std::vector<TraceEvent> trace;
  std::vector<SelectionLogEntry> selection_log;
  MlpModel final_model;  // final-trained model, or the best trial's for full
};

/// Thrown when every configuration fails; carries the trace for diagnostics.
class AllTrialsFailed : public std::runtime_error {
 public:
  explicit AllTrialsFailed(std::vector<TraceEvent> trace)
      : std::runtime_error("all trials failed; see execution trace"), trace_(std::move(trace)) {}
  const std::vector<TraceEvent>& trace() const { return trace_; }

 private:
  std::vector<TraceEvent> trace_;
};

/// Full tuning loop: generate configurations on demand, evaluate them under
/// the scheduler's grants, pick the best final evaluation, and (for subset
/// strategies) retrain it on the full data for T epochs.
StrategyRunResult tune(const ExperimentConfig& cfg);

struct FinalTrainResult {
  MlpModel model;
  LossReport test_report;
  CostMeter meter;
};

FinalTrainResult final_train(const ConfigSample& best_config, const SplitResult& data, int total_epochs,
                             int default_batch_size, std::uint64_t master_seed);

struct CompareRow {
  std::string strategy;
  double fraction = 1.0;
  double speedup = 1.0;
  double relative_test_error_pct = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t total_cost = 0;
};

struct CompareResult {
  std::vector<StrategyRunResult> runs;
  std::vector<CompareRow> rows;
};

/// Runs each strategy (x fraction) with paired seeds against the mandatory
/// full baseline; speedup = cost(full) / cost(strategy).
CompareResult compare_strategies(const ExperimentConfig& base);

ojson report_to_json(const ExperimentConfig& cfg, const StrategyRunResult& result);
void write_run_artifacts(const std::string& out_dir, const ExperimentConfig& cfg, const StrategyRunResult& result);
void write_scatter_csv(const std::string& path, const std::vector<CompareRow>& rows);
std::vector<CompareRow> read_scatter_csv(const std::string& path);

}  // namespace coretune
