// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "coretune/common.hpp"

namespace coretune {

struct SchedulerConfig {
  enum class Kind { sha, hyperband, asha };

  Kind kind = Kind::hyperband;
  double eta = 3.0;
  int min_resource = 1;   // r, epochs
  int max_resource = 27;  // R_max, epochs

  void validate() const;
};

SchedulerConfig::Kind scheduler_kind_from_string(const std::string& s);
std::string to_string(SchedulerConfig::Kind k);

struct ShaRound {
  int n = 0;  // configurations entering the round
  int r = 0;  // cumulative epochs each has trained once the round completes
};

/// Successive-halving plan: n_0 = n, r_0 = r, then n_{i+1} = floor(n_i/eta)
/// and r_{i+1} = min(eta*r_i, r_max); stops after a round at r_max or when
/// no configuration survives.
std::vector<ShaRound> sha_plan(int n, int r, double eta, int r_max);

struct Bracket {
  int n0 = 0;
  int r0 = 0;
  std::vector<ShaRound> rounds;
};

/// s_max = floor(log_eta r_max); bracket s in s_max..0 runs SHA with
/// n_s = ceil((s_max+1)/(s+1) * eta^s) and r_s = r_max * eta^{-s}.
std::vector<Bracket> hyperband_brackets(int r_max, double eta);

/// Pull-based scheduler interface shared by SHA, Hyperband, and ASHA. The
/// driver asks for work when a worker is idle and feeds back scores as
/// grants complete. Scores are minimized; failed trials report +inf.
class TrialScheduler {
 public:
  struct Assignment {
    int trial_id = 0;
    bool is_new = false;    // first grant for this trial (config needed)
    int target_epochs = 0;  // cumulative epochs after the grant
    int rung = 0;
  };

  virtual ~TrialScheduler() = default;
  virtual std::optional<Assignment> next() = 0;
  virtual void report(int trial_id, int rung, double score) = 0;
  virtual int max_resource() const = 0;
};

class ShaScheduler : public TrialScheduler {
 public:
  ShaScheduler(int n, int r, double eta, int r_max, int trial_id_offset = 0);

  std::optional<Assignment> next() override;
  void report(int trial_id, int rung, double score) override;
  int max_resource() const override { return r_max_; }
  bool done() const;

 private:
  void advance_round();

  std::vector<ShaRound> rounds_;
  double eta_;
  int r_max_;
  int offset_;
  std::size_t round_ = 0;
  std::vector<int> pending_;                      // not yet dispatched this round
  std::size_t outstanding_ = 0;                   // dispatched, result not in
  std::vector<std::pair<int, double>> completed_;  // this round's results
};

class HyperbandScheduler : public TrialScheduler {
 public:
  HyperbandScheduler(int r_max, double eta);

  std::optional<Assignment> next() override;
  void report(int trial_id, int rung, double score) override;
  int max_resource() const override { return r_max_; }
  const std::vector<Bracket>& brackets() const { return brackets_; }

 private:
  std::vector<Bracket> brackets_;
  std::vector<std::unique_ptr<ShaScheduler>> shas_;
  int r_max_;
  std::size_t current_ = 0;
};

/// Asynchronous successive halving. Rung j means the trial has trained
/// min(r*eta^j, R_max) cumulative epochs. Promotable trials are searched from
/// the highest occupied rung downward; otherwise a new configuration spawns
/// at the base rung until `max_configs` have been created.
class AshaScheduler : public TrialScheduler {
 public:
  AshaScheduler(const SchedulerConfig& cfg, int max_configs);

  std::optional<Assignment> next() override;
  void report(int trial_id, int rung, double score) override;
  int max_resource() const override { return cfg_.max_resource; }

  int rung_epochs(int rung) const;
  int top_rung() const { return top_rung_; }

 private:
  struct Rung {
    std::vector<std::pair<int, double>> completed;  // (trial, score)
    std::set<int> promoted;
  };

  SchedulerConfig cfg_;
  int max_configs_;
  int spawned_ = 0;
  int top_rung_ = 0;
  std::vector<Rung> rungs_;
};

std::unique_ptr<TrialScheduler> make_scheduler(const SchedulerConfig& cfg, int n_configs);

struct TraceEvent {
  double t = 0.0;        // virtual time, in sample-gradient units
  std::string event;     // "start" | "finish" | "fail"
  int trial = 0;
  int rung = 0;
  double score = std::numeric_limits<double>::quiet_NaN();
  double cost = 0.0;     // units consumed by the grant ("finish"/"fail" only)
};

struct RunnerResult {
  double score = std::numeric_limits<double>::infinity();
  double cost_units = 0.0;
  bool failed = false;
};

using TrialRunner = std::function<RunnerResult(const TrialScheduler::Assignment&)>;
using GrantCallback = std::function<void(const TrialScheduler::Assignment&, const RunnerResult&)>;

struct VirtualRunResult {
  std::vector<TraceEvent> trace;
  double makespan = 0.0;
};

/// Discrete-event loop over `workers` virtual workers. Grants execute eagerly
/// but their results reach the scheduler (and the callback) only at their
/// virtual completion time, so asynchronous schedulers observe the same
/// information order a real pool would. Deterministic for fixed inputs.
VirtualRunResult run_virtual(TrialScheduler& scheduler, const TrialRunner& runner, int workers,
                             const GrantCallback& on_complete = {});

void write_trace_jsonl(const std::vector<TraceEvent>& trace, const std::string& path);

}  // namespace coretune
