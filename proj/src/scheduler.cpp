// SPDX-License-Identifier: Apache-2.0
#include "coretune/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include <json.hpp>

namespace coretune {

void SchedulerConfig::validate() const {
  if (eta < 2.0) throw ConfigError("eta must be >= 2");
  if (min_resource < 1) throw ConfigError("min_resource must be >= 1");
  if (max_resource < min_resource) throw ConfigError("max_resource must be >= min_resource");
}

SchedulerConfig::Kind scheduler_kind_from_string(const std::string& s) {
  if (s == "sha") return SchedulerConfig::Kind::sha;
  if (s == "hyperband") return SchedulerConfig::Kind::hyperband;
  if (s == "asha") return SchedulerConfig::Kind::asha;
  throw ConfigError("unknown scheduler '" + s + "'");
}

std::string to_string(SchedulerConfig::Kind k) {
  switch (k) {
    case SchedulerConfig::Kind::sha: return "sha";
    case SchedulerConfig::Kind::hyperband: return "hyperband";
    case SchedulerConfig::Kind::asha: return "asha";
  }
  return "?";
}

std::vector<ShaRound> sha_plan(int n, int r, double eta, int r_max) {
  if (n < 1) throw ConfigError("sha needs at least one configuration");
  if (r < 1 || r > r_max) throw ConfigError("sha needs 1 <= r <= r_max");
  if (eta < 2.0) throw ConfigError("eta must be >= 2");

  std::vector<ShaRound> rounds;
  int ni = n;
  int ri = r;
  while (true) {
    rounds.push_back(ShaRound{ni, ri});
    if (ri >= r_max) break;
    ni = static_cast<int>(std::floor(static_cast<double>(ni) / eta + 1e-9));
    if (ni < 1) break;
    ri = std::min(r_max, static_cast<int>(std::floor(eta * static_cast<double>(ri) + 1e-9)));
  }
  return rounds;
}

std::vector<Bracket> hyperband_brackets(int r_max, double eta) {
  if (eta < 2.0) throw ConfigError("eta must be >= 2");
  if (static_cast<double>(r_max) < eta) throw ConfigError("hyperband needs r_max >= eta");

  int s_max = 0;
  double pow_eta = 1.0;
  while (pow_eta * eta <= static_cast<double>(r_max) + 1e-9) {
    pow_eta *= eta;
    ++s_max;
  }

  std::vector<Bracket> brackets;
  for (int s = s_max; s >= 0; --s) {
    double eta_s = 1.0;
    for (int i = 0; i < s; ++i) eta_s *= eta;
    const double n_exact = (static_cast<double>(s_max) + 1.0) / (static_cast<double>(s) + 1.0) * eta_s;
    Bracket b;
    b.n0 = static_cast<int>(std::ceil(n_exact - 1e-9));
    b.r0 = std::max(1, static_cast<int>(std::floor(static_cast<double>(r_max) / eta_s + 1e-9)));
    b.rounds = sha_plan(b.n0, b.r0, eta, r_max);
    brackets.push_back(std::move(b));
  }
  return brackets;
}

ShaScheduler::ShaScheduler(int n, int r, double eta, int r_max, int trial_id_offset)
    : rounds_(sha_plan(n, r, eta, r_max)), eta_(eta), r_max_(r_max), offset_(trial_id_offset) {
  pending_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pending_[static_cast<std::size_t>(i)] = offset_ + i;
}

std::optional<TrialScheduler::Assignment> ShaScheduler::next() {
  if (round_ >= rounds_.size() || pending_.empty()) return std::nullopt;
  const int trial = pending_.front();
  pending_.erase(pending_.begin());
  ++outstanding_;
  return Assignment{trial, round_ == 0, rounds_[round_].r, static_cast<int>(round_)};
}

void ShaScheduler::report(int trial_id, int /*rung*/, double score) {
  completed_.emplace_back(trial_id, score);
  --outstanding_;
  if (pending_.empty() && outstanding_ == 0) advance_round();
}

void ShaScheduler::advance_round() {
  if (round_ + 1 >= rounds_.size()) {
    round_ = rounds_.size();
    return;
  }
  const int survivors = rounds_[round_ + 1].n;
  std::stable_sort(completed_.begin(), completed_.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;  // ties favor the lower trial id
  });
  pending_.clear();
  for (int i = 0; i < survivors; ++i) pending_.push_back(completed_[static_cast<std::size_t>(i)].first);
  std::sort(pending_.begin(), pending_.end());
  completed_.clear();
  ++round_;
}

bool ShaScheduler::done() const { return round_ >= rounds_.size(); }

HyperbandScheduler::HyperbandScheduler(int r_max, double eta) : brackets_(hyperband_brackets(r_max, eta)), r_max_(r_max) {
  int offset = 0;
  for (const Bracket& b : brackets_) {
    shas_.push_back(std::make_unique<ShaScheduler>(b.n0, b.r0, eta, r_max, offset));
    offset += b.n0;
  }
}

std::optional<TrialScheduler::Assignment> HyperbandScheduler::next() {
  while (current_ < shas_.size()) {
    if (auto a = shas_[current_]->next()) return a;
    if (!shas_[current_]->done()) return std::nullopt;  // waiting on results
    ++current_;
  }
  return std::nullopt;
}

void HyperbandScheduler::report(int trial_id, int rung, double score) {
  int offset = 0;
  for (std::size_t i = 0; i < brackets_.size(); ++i) {
    if (trial_id < offset + brackets_[i].n0) {
      shas_[i]->report(trial_id, rung, score);
      return;
    }
    offset += brackets_[i].n0;
  }
  throw ConfigError("report for unknown trial " + std::to_string(trial_id));
}

AshaScheduler::AshaScheduler(const SchedulerConfig& cfg, int max_configs) : cfg_(cfg), max_configs_(max_configs) {
  cfg_.validate();
  if (max_configs_ < 1) throw ConfigError("asha needs at least one configuration");
  double res = cfg_.min_resource;
  top_rung_ = 0;
  while (res < static_cast<double>(cfg_.max_resource) - 1e-9) {
    res *= cfg_.eta;
    ++top_rung_;
  }
  rungs_.resize(static_cast<std::size_t>(top_rung_) + 1);
}

int AshaScheduler::rung_epochs(int rung) const {
  double res = cfg_.min_resource;
  for (int i = 0; i < rung; ++i) res *= cfg_.eta;
  return std::min(cfg_.max_resource, static_cast<int>(std::floor(res + 1e-9)));
}

std::optional<TrialScheduler::Assignment> AshaScheduler::next() {
  // Promotion scan from the highest rung downward; the top rung is terminal.
  for (int j = top_rung_ - 1; j >= 0; --j) {
    const Rung& rung = rungs_[static_cast<std::size_t>(j)];
    const int budget = static_cast<int>(std::floor(static_cast<double>(rung.completed.size()) / cfg_.eta + 1e-9));
    if (budget <= static_cast<int>(rung.promoted.size())) continue;
    std::vector<std::pair<int, double>> ranked = rung.completed;
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second < b.second;
      return a.first < b.first;
    });
    for (int i = 0; i < budget; ++i) {
      const int trial = ranked[static_cast<std::size_t>(i)].first;
      if (rungs_[static_cast<std::size_t>(j)].promoted.insert(trial).second) {
        return Assignment{trial, false, rung_epochs(j + 1), j + 1};
      }
    }
  }
  if (spawned_ < max_configs_) {
    const int trial = spawned_++;
    return Assignment{trial, true, rung_epochs(0), 0};
  }
  return std::nullopt;
}

void AshaScheduler::report(int trial_id, int rung, double score) {
  if (rung < 0 || rung > top_rung_) throw ConfigError("report for unknown rung " + std::to_string(rung));
  rungs_[static_cast<std::size_t>(rung)].completed.emplace_back(trial_id, score);
}

std::unique_ptr<TrialScheduler> make_scheduler(const SchedulerConfig& cfg, int n_configs) {
  cfg.validate();
  switch (cfg.kind) {
    case SchedulerConfig::Kind::sha:
      return std::make_unique<ShaScheduler>(n_configs, cfg.min_resource, cfg.eta, cfg.max_resource);
    case SchedulerConfig::Kind::hyperband: {
      auto hb = std::make_unique<HyperbandScheduler>(cfg.max_resource, cfg.eta);
      if (!hb->brackets().empty() && hb->brackets().front().n0 != n_configs) {
        log_info("hyperband bracket plan starts with ", hb->brackets().front().n0, " configurations (config n=",
                 n_configs, " applies to sha/asha)");
      }
      return hb;
    }
    case SchedulerConfig::Kind::asha:
      return std::make_unique<AshaScheduler>(cfg, n_configs);
  }
  throw ConfigError("unreachable scheduler kind");
}

VirtualRunResult run_virtual(TrialScheduler& scheduler, const TrialRunner& runner, int workers,
                             const GrantCallback& on_complete) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");

  struct PendingEvent {
    double t;
    long seq;
    int worker;
    TrialScheduler::Assignment assignment;
    RunnerResult result;
  };
  const auto later = [](const PendingEvent& a, const PendingEvent& b) {
    if (a.t != b.t) return a.t > b.t;
    return a.seq > b.seq;
  };
  std::priority_queue<PendingEvent, std::vector<PendingEvent>, decltype(later)> events(later);

  std::vector<bool> busy(static_cast<std::size_t>(workers), false);
  VirtualRunResult out;
  double now = 0.0;
  long seq = 0;

  const auto lowest_idle = [&]() -> int {
    for (int w = 0; w < workers; ++w) {
      if (!busy[static_cast<std::size_t>(w)]) return w;
    }
    return -1;
  };

  while (true) {
    for (int w = lowest_idle(); w >= 0; w = lowest_idle()) {
      const auto assignment = scheduler.next();
      if (!assignment) break;
      busy[static_cast<std::size_t>(w)] = true;
      // The grant computes eagerly; its result becomes visible to the
      // scheduler only at the virtual completion time.
      RunnerResult result = runner(*assignment);
      out.trace.push_back(TraceEvent{now, "start", assignment->trial_id, assignment->rung,
                                     std::numeric_limits<double>::quiet_NaN(), 0.0});
      events.push(PendingEvent{now + std::max(0.0, result.cost_units), seq++, w, *assignment, result});
    }
    if (events.empty()) break;
    PendingEvent ev = events.top();
    events.pop();
    now = ev.t;
    out.makespan = std::max(out.makespan, now);
    busy[static_cast<std::size_t>(ev.worker)] = false;
    const double score = ev.result.failed ? std::numeric_limits<double>::infinity() : ev.result.score;
    out.trace.push_back(
        TraceEvent{now, ev.result.failed ? "fail" : "finish", ev.assignment.trial_id, ev.assignment.rung, score,
                   ev.result.cost_units});
    scheduler.report(ev.assignment.trial_id, ev.assignment.rung, score);
    if (on_complete) on_complete(ev.assignment, ev.result);
  }
  return out;
}

void write_trace_jsonl(const std::vector<TraceEvent>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open trace file for writing: " + path);
  for (const TraceEvent& ev : trace) {
    nlohmann::json j{{"t_virtual", ev.t}, {"event", ev.event}, {"trial", ev.trial}, {"rung", ev.rung}, {"cost", ev.cost}};
    if (std::isfinite(ev.score)) {
      j["score"] = ev.score;
    } else {
      j["score"] = nullptr;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace coretune
