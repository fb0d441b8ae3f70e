// SPDX-License-Identifier: Apache-2.0
#include "coretune/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace coretune {

void TrialSchedule::validate() const {
  if (total_epochs < 1) throw ConfigError("T must be >= 1");
  if (selection_interval < 1) throw ConfigError("R must be >= 1");
  if (warm_frac < 0.0 || warm_frac > 1.0) throw ConfigError("kappa must lie in [0,1]");
}

int warmstart_epochs(double kappa, int total_epochs, double coreset_size, double train_size) {
  if (train_size <= 0.0) throw ConfigError("train size must be positive");
  return warmstart_epochs(kappa, total_epochs, coreset_size / train_size);
}

int warmstart_epochs(double kappa, int total_epochs, double fraction) {
  if (kappa < 0.0 || kappa > 1.0) throw ConfigError("kappa must lie in [0,1]");
  if (total_epochs < 1) throw ConfigError("T must be >= 1");
  if (fraction <= 0.0) throw ConfigError("fraction must be positive");
  const auto t_w = static_cast<int>(std::llround(kappa * static_cast<double>(total_epochs) * fraction));
  return std::clamp(t_w, 0, total_epochs);
}

double ExperimentConfig::resolved_kappa() const {
  if (kappa) return *kappa;
  return scheduler.kind == SchedulerConfig::Kind::asha ? 0.35 : 0.0;
}

void ExperimentConfig::validate() const {
  space.validate();
  scheduler.validate();
  strategy.validate();
  if (n_configs < 1) throw ConfigError("n must be >= 1");
  if (total_epochs < 1) throw ConfigError("T must be >= 1");
  if (selection_interval < 1) throw ConfigError("R must be >= 1");
  if (scheduler.max_resource > total_epochs) {
    throw ConfigError("scheduler max_resource must not exceed T");
  }
  if (default_batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (metric != "val_accuracy" && metric != "val_loss") throw ConfigError("metric must be val_accuracy or val_loss");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (kappa && (*kappa < 0.0 || *kappa > 1.0)) throw ConfigError("kappa must lie in [0,1]");
  if (searcher_kind != "random" && searcher_kind != "tpe") throw ConfigError("searcher must be random or tpe");
}

namespace {

Domain parse_domain(const std::string& name, const ojson& j) {
  Domain d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") {
    d.kind = Domain::Kind::uniform;
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
  } else if (kind == "log_uniform") {
    d.kind = Domain::Kind::log_uniform;
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
  } else if (kind == "choice") {
    d.kind = Domain::Kind::choice;
    d.choices = j.at("values").get<std::vector<std::string>>();
  } else if (kind == "int_choice") {
    d.kind = Domain::Kind::int_choice;
    d.int_choices = j.at("values").get<std::vector<std::int64_t>>();
  } else {
    throw ConfigError("domain '" + name + "': unknown kind '" + kind + "'");
  }
  d.validate(name);
  return d;
}

ojson domain_to_json(const Domain& d) {
  switch (d.kind) {
    case Domain::Kind::uniform:
      return ojson{{"kind", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
    case Domain::Kind::log_uniform:
      return ojson{{"kind", "log_uniform"}, {"lo", d.lo}, {"hi", d.hi}};
    case Domain::Kind::choice:
      return ojson{{"kind", "choice"}, {"values", d.choices}};
    case Domain::Kind::int_choice:
      return ojson{{"kind", "int_choice"}, {"values", d.int_choices}};
  }
  throw ConfigError("unreachable domain kind");
}

ojson config_sample_to_json(const ConfigSample& sample) {
  ojson j = ojson::object();
  for (const auto& [name, value] : sample.values) {
    std::visit([&](const auto& v) { j[name] = v; }, value);
  }
  return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const ojson& j) {
  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const ojson& d = j.at("dataset");
    if (d.contains("kind")) cfg.dataset.kind = d.at("kind").get<std::string>();
    if (d.contains("path")) cfg.dataset.path = d.at("path").get<std::string>();
    if (d.contains("preset")) cfg.dataset.preset = d.at("preset").get<std::string>();
    if (d.contains("seed")) cfg.dataset.seed = d.at("seed").get<std::uint64_t>();
    if (d.contains("val_frac")) cfg.dataset.val_frac = d.at("val_frac").get<double>();
    if (d.contains("test_frac")) cfg.dataset.test_frac = d.at("test_frac").get<double>();
    if (d.contains("val_size")) cfg.dataset.val_size = d.at("val_size").get<long>();
    if (d.contains("test_size")) cfg.dataset.test_size = d.at("test_size").get<long>();
    if (d.contains("standardize")) cfg.dataset.standardize = d.at("standardize").get<bool>();
  }
  if (!j.contains("space")) throw ConfigError("experiment config needs a 'space' object");
  for (const auto& [name, dj] : j.at("space").items()) {
    cfg.space.domains.emplace_back(name, parse_domain(name, dj));
  }
  if (j.contains("searcher")) {
    const ojson& s = j.at("searcher");
    if (s.contains("kind")) cfg.searcher_kind = s.at("kind").get<std::string>();
    if (s.contains("gamma")) cfg.tpe.gamma = s.at("gamma").get<double>();
    if (s.contains("n_candidates")) cfg.tpe.n_candidates = s.at("n_candidates").get<int>();
    if (s.contains("min_obs")) cfg.tpe.min_obs = s.at("min_obs").get<int>();
  }
  if (j.contains("scheduler")) {
    const ojson& s = j.at("scheduler");
    if (s.contains("kind")) cfg.scheduler.kind = scheduler_kind_from_string(s.at("kind").get<std::string>());
    if (s.contains("eta")) cfg.scheduler.eta = s.at("eta").get<double>();
    if (s.contains("min_resource")) cfg.scheduler.min_resource = s.at("min_resource").get<int>();
    if (s.contains("max_resource")) cfg.scheduler.max_resource = s.at("max_resource").get<int>();
  }
  if (j.contains("strategy")) {
    const ojson& s = j.at("strategy");
    if (s.contains("kind")) cfg.strategy.strategy = selection_strategy_from_string(s.at("kind").get<std::string>());
    if (s.contains("fraction")) cfg.strategy.fraction = s.at("fraction").get<double>();
    if (s.contains("lambda")) cfg.strategy.lambda = s.at("lambda").get<double>();
    if (s.contains("epsilon")) cfg.strategy.epsilon = s.at("epsilon").get<double>();
    if (s.contains("kappa") && !s.at("kappa").is_null()) cfg.kappa = s.at("kappa").get<double>();
    if (s.contains("alg2_literal_init")) cfg.alg2_literal_init = s.at("alg2_literal_init").get<bool>();
  }
  if (j.contains("n")) cfg.n_configs = j.at("n").get<int>();
  if (j.contains("T")) cfg.total_epochs = j.at("T").get<int>();
  if (j.contains("R")) cfg.selection_interval = j.at("R").get<int>();
  if (j.contains("batch_size")) cfg.default_batch_size = j.at("batch_size").get<int>();
  if (j.contains("metric")) cfg.metric = j.at("metric").get<std::string>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
  if (j.contains("select_debug")) cfg.select_debug = j.at("select_debug").get<bool>();
  if (j.contains("compare")) {
    const ojson& c = j.at("compare");
    if (c.contains("strategies")) cfg.compare.strategies = c.at("strategies").get<std::vector<std::string>>();
    if (c.contains("fractions")) {
      if (c.at("fractions").is_string()) {
        if (c.at("fractions").get<std::string>() != "paper-fractions") {
          throw ConfigError("unknown fractions preset '" + c.at("fractions").get<std::string>() + "'");
        }
        cfg.compare.fractions = {0.01, 0.05, 0.10, 0.30};
      } else {
        cfg.compare.fractions = c.at("fractions").get<std::vector<double>>();
      }
    }
  }
  if (cfg.strategy.strategy == SelectionStrategy::full && cfg.strategy.fraction != 1.0) {
    log_debug("strategy=full forces fraction 1.0");
    cfg.strategy.fraction = 1.0;
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

ojson experiment_config_to_json(const ExperimentConfig& cfg) {
  ojson space = ojson::object();
  for (const auto& [name, domain] : cfg.space.domains) space[name] = domain_to_json(domain);
  ojson dataset{{"kind", cfg.dataset.kind},     {"preset", cfg.dataset.preset},
                {"path", cfg.dataset.path},     {"seed", cfg.dataset.seed},
                {"val_frac", cfg.dataset.val_frac}, {"test_frac", cfg.dataset.test_frac},
                {"standardize", cfg.dataset.standardize}};
  if (cfg.dataset.val_size) dataset["val_size"] = *cfg.dataset.val_size;
  if (cfg.dataset.test_size) dataset["test_size"] = *cfg.dataset.test_size;
  ojson strategy{{"kind", to_string(cfg.strategy.strategy)},
                 {"fraction", cfg.strategy.fraction},
                 {"lambda", cfg.strategy.lambda},
                 {"epsilon", cfg.strategy.epsilon},
                 {"kappa", cfg.resolved_kappa()},
                 {"alg2_literal_init", cfg.alg2_literal_init}};
  return ojson{{"dataset", dataset},
               {"space", space},
               {"searcher",
                ojson{{"kind", cfg.searcher_kind},
                      {"gamma", cfg.tpe.gamma},
                      {"n_candidates", cfg.tpe.n_candidates},
                      {"min_obs", cfg.tpe.min_obs}}},
               {"scheduler", ojson{{"kind", to_string(cfg.scheduler.kind)},
                                   {"eta", cfg.scheduler.eta},
                                   {"min_resource", cfg.scheduler.min_resource},
                                   {"max_resource", cfg.scheduler.max_resource}}},
               {"strategy", strategy},
               {"n", cfg.n_configs},
               {"T", cfg.total_epochs},
               {"R", cfg.selection_interval},
               {"batch_size", cfg.default_batch_size},
               {"metric", cfg.metric},
               {"seed", cfg.seed},
               {"workers", cfg.workers},
               {"select_debug", cfg.select_debug},
               {"compare", ojson{{"strategies", cfg.compare.strategies}, {"fractions", cfg.compare.fractions}}}};
}

void apply_override(ojson& config, const std::string& key_value) {
  const std::size_t eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + key_value);
  const std::string path = key_value.substr(0, eq);
  const std::string raw = key_value.substr(eq + 1);

  ojson value;
  try {
    value = ojson::parse(raw);
  } catch (const std::exception&) {
    value = raw;  // plain string
  }

  ojson* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment: " + key_value);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

SplitResult load_experiment_dataset(const ExperimentConfig& cfg) {
  Dataset pool;
  if (cfg.dataset.kind == "libsvm") {
    pool = parse_libsvm_file(cfg.dataset.path);
  } else if (cfg.dataset.kind == "synthetic") {
    if (cfg.dataset.preset != "dna") throw ConfigError("unknown synthetic preset '" + cfg.dataset.preset + "'");
    pool = synthesize_tabular(dna_like_spec(cfg.dataset.seed));
  } else {
    throw ConfigError("unknown dataset kind '" + cfg.dataset.kind + "'");
  }

  double val_frac = cfg.dataset.val_frac;
  double test_frac = cfg.dataset.test_frac;
  const double n = static_cast<double>(pool.n());
  // Exact split counts ride through the floor(N*frac) rule via (k+1/2)/N.
  if (cfg.dataset.val_size) val_frac = (static_cast<double>(*cfg.dataset.val_size) + 0.5) / n;
  if (cfg.dataset.test_size) test_frac = (static_cast<double>(*cfg.dataset.test_size) + 0.5) / n;

  SplitResult splits = split_dataset(pool, val_frac, test_frac, derive_seed(cfg.dataset.seed, "dataset-split"));
  if (cfg.dataset.standardize) {
    const Standardizer st = fit_standardizer(splits.train);
    st.apply(splits.train);
    st.apply(splits.validation);
    st.apply(splits.test);
  }
  return splits;
}

namespace {

OptimizerConfig optimizer_from_config(const ConfigSample& sample, int total_epochs) {
  OptimizerConfig oc;
  oc.total_epochs = total_epochs;
  oc.gamma = 0.05;      // tabular protocol decay
  oc.step_period = 20;  // epochs between decays
  if (sample.has("optimizer")) {
    const std::string& kind = sample.text("optimizer");
    if (kind == "adam") {
      oc.kind = OptimizerConfig::Kind::adam;
    } else if (kind == "sgd") {
      oc.kind = OptimizerConfig::Kind::sgd;
    } else {
      throw ConfigError("unknown optimizer '" + kind + "'");
    }
  }
  if (sample.has("lr")) oc.lr = sample.number("lr");
  if (sample.has("momentum")) oc.momentum = sample.number("momentum");
  if (sample.has("nesterov")) oc.nesterov = sample.text("nesterov") == "true";
  if (sample.has("weight_decay")) oc.weight_decay = sample.number("weight_decay");
  if (sample.has("scheduler")) {
    const std::string& sched = sample.text("scheduler");
    if (sched == "none") {
      oc.schedule = OptimizerConfig::Schedule::none;
    } else if (sched == "cosine") {
      oc.schedule = OptimizerConfig::Schedule::cosine;
    } else if (sched == "step") {
      oc.schedule = OptimizerConfig::Schedule::step;
    } else {
      throw ConfigError("unknown lr scheduler '" + sched + "'");
    }
  }
  if (sample.has("gamma")) oc.gamma = sample.number("gamma");
  if (sample.has("step_period")) oc.step_period = static_cast<int>(sample.integer("step_period"));
  oc.validate();
  return oc;
}

int batch_size_from_config(const ConfigSample& sample, int fallback) {
  if (sample.has("batch")) return static_cast<int>(sample.integer("batch"));
  return fallback;
}

std::vector<int> layer_dims_from_config(const ConfigSample& sample, long input_dim, int n_classes) {
  const int h1 = sample.has("h1") ? static_cast<int>(sample.integer("h1")) : 200;
  const int h2 = sample.has("h2") ? static_cast<int>(sample.integer("h2")) : 200;
  return {static_cast<int>(input_dim), h1, h2, n_classes};
}

void train_full_epoch(Trial& t, const Dataset& train, Gradients& grads, int epoch) {
  std::vector<double> ones;
  for (const auto& batch : t.plan.batches) {
    ones.assign(batch.size(), 1.0);
    const LossReport rep = loss_and_grad(t.model, train, batch, ones, grads, &t.meter);
    if (!std::isfinite(rep.mean_loss)) throw ConfigError("non-finite training loss");
    t.optimizer->step(t.model, grads, epoch);
  }
}

}  // namespace

void run_trial_grant(Trial& trial, const Dataset& train, const Dataset& validation, const TrialSchedule& schedule,
                     const SelectionConfig& selection, int grant_epochs, std::uint64_t master_seed,
                     bool alg2_literal_init, std::vector<SelectionLogEntry>* selection_log) {
  schedule.validate();
  if (grant_epochs < 1) throw ConfigError("grant must cover at least one epoch");
  if (trial.epochs_done + grant_epochs > schedule.total_epochs) {
    throw ConfigError("grant would exceed the trial's epoch budget");
  }
  const int t_w = warmstart_epochs(schedule.warm_frac, schedule.total_epochs, selection.fraction);

  Gradients grads;
  std::vector<double> batch_weights;
  for (int e = 0; e < grant_epochs; ++e) {
    const int epoch = trial.epochs_done;
    if (epoch < t_w) {
      train_full_epoch(trial, train, grads, epoch);
      ++trial.epochs_done;
      continue;
    }
    const bool refresh =
        !trial.coreset || (epoch > t_w && epoch % schedule.selection_interval == 0);
    if (refresh) {
      SelectionConfig effective = selection;
      if (alg2_literal_init && !trial.coreset && selection.strategy == SelectionStrategy::gss) {
        effective.strategy = SelectionStrategy::random;
      }
      const std::uint64_t sel_seed =
          derive_seed(master_seed, "selection", (static_cast<std::uint64_t>(trial.id) << 20) ^ static_cast<std::uint64_t>(epoch));
      trial.coreset = select_coreset(trial.model, train, trial.plan, effective, sel_seed, &trial.meter);
      if (selection_log != nullptr) {
        selection_log->push_back(SelectionLogEntry{trial.id, epoch, trial.coreset->batch_indices,
                                                   trial.coreset->weights, trial.coreset->residual_norm});
      }
    }
    const Coreset& coreset = *trial.coreset;
    for (std::size_t i = 0; i < coreset.batch_indices.size(); ++i) {
      if (coreset.weights[i] <= 0.0) continue;  // zero weight contributes nothing
      const auto& batch = trial.plan.batches[static_cast<std::size_t>(coreset.batch_indices[i])];
      batch_weights.assign(batch.size(), coreset.weights[i]);
      const LossReport rep = loss_and_grad(trial.model, train, batch, batch_weights, grads, &trial.meter);
      if (!std::isfinite(rep.mean_loss)) throw ConfigError("non-finite training loss");
      trial.optimizer->step(trial.model, grads, epoch);
    }
    ++trial.epochs_done;
  }

  const LossReport rep = evaluate(trial.model, validation, &trial.meter);
  trial.last_val_accuracy = rep.accuracy;
  trial.last_val_loss = rep.mean_loss;
  trial.evaluated = true;
}

FinalTrainResult final_train(const ConfigSample& best_config, const SplitResult& data, int total_epochs,
                             int default_batch_size, std::uint64_t master_seed) {
  FinalTrainResult out;
  const int batch = batch_size_from_config(best_config, default_batch_size);
  out.model = init_mlp(layer_dims_from_config(best_config, data.train.dim(), data.train.n_classes),
                       derive_seed(master_seed, "final-init"));
  Optimizer optimizer(optimizer_from_config(best_config, total_epochs));
  const BatchPlan plan = make_batches(data.train, batch, derive_seed(master_seed, "final-batch"));

  Gradients grads;
  std::vector<double> ones;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    for (const auto& b : plan.batches) {
      ones.assign(b.size(), 1.0);
      const LossReport rep = loss_and_grad(out.model, data.train, b, ones, grads, &out.meter);
      if (!std::isfinite(rep.mean_loss)) throw ConfigError("non-finite loss in final training");
      optimizer.step(out.model, grads, epoch);
    }
  }
  out.test_report = evaluate(out.model, data.test, &out.meter);
  return out;
}

StrategyRunResult tune(const ExperimentConfig& cfg) {
  cfg.validate();
  const SplitResult data = load_experiment_dataset(cfg);

  TrialSchedule schedule{cfg.total_epochs, cfg.selection_interval, cfg.resolved_kappa()};
  schedule.validate();

  auto searcher = make_searcher(cfg.searcher_kind, cfg.space, cfg.tpe, derive_seed(cfg.seed, "searcher"));
  auto scheduler = make_scheduler(cfg.scheduler, cfg.n_configs);
  ObservationHistory history;

  std::vector<std::unique_ptr<Trial>> trials;
  StrategyRunResult result;
  result.strategy = to_string(cfg.strategy.strategy);
  result.fraction = cfg.strategy.fraction;

  const auto metric_score = [&](const Trial& t) {
    return cfg.metric == "val_loss" ? t.last_val_loss : -t.last_val_accuracy;
  };

  const TrialRunner runner = [&](const TrialScheduler::Assignment& a) -> RunnerResult {
    while (static_cast<int>(trials.size()) <= a.trial_id) trials.push_back(nullptr);
    if (a.is_new) {
      auto t = std::make_unique<Trial>();
      t->id = a.trial_id;
      t->config = searcher->suggest(history.snapshot());
      t->model = init_mlp(layer_dims_from_config(t->config, data.train.dim(), data.train.n_classes),
                          derive_seed(cfg.seed, "init", static_cast<std::uint64_t>(a.trial_id)));
      t->optimizer = std::make_unique<Optimizer>(optimizer_from_config(t->config, cfg.total_epochs));
      t->plan = make_batches(data.train, batch_size_from_config(t->config, cfg.default_batch_size),
                             derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(a.trial_id)));
      trials[static_cast<std::size_t>(a.trial_id)] = std::move(t);
    }
    Trial& trial = *trials[static_cast<std::size_t>(a.trial_id)];
    trial.max_rung = std::max(trial.max_rung, a.rung);

    RunnerResult rr;
    const std::uint64_t before = trial.meter.billable();
    if (trial.failed) {
      rr.failed = true;  // a failed trial stays failed if ever re-granted
      return rr;
    }
    try {
      run_trial_grant(trial, data.train, data.validation, schedule, cfg.strategy,
                      a.target_epochs - trial.epochs_done, cfg.seed, cfg.alg2_literal_init,
                      cfg.select_debug ? &result.selection_log : nullptr);
      rr.score = metric_score(trial);
    } catch (const std::exception& e) {
      log_info("trial ", trial.id, " failed: ", e.what());
      trial.failed = true;
      rr.failed = true;
    }
    rr.cost_units = static_cast<double>(trial.meter.billable() - before);
    return rr;
  };

  const GrantCallback on_complete = [&](const TrialScheduler::Assignment& a, const RunnerResult& rr) {
    if (rr.failed) return;
    const Trial& trial = *trials[static_cast<std::size_t>(a.trial_id)];
    history.append(Observation{trial.config, rr.score, static_cast<double>(trial.epochs_done)});
  };

  const VirtualRunResult vr = run_virtual(*scheduler, runner, cfg.workers, on_complete);
  result.trace = vr.trace;
  result.makespan = vr.makespan;

  // Best final evaluation across every configuration, ties to the lower id.
  int best = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    if (!t || t->failed || !t->evaluated) continue;
    const double s = metric_score(*t);
    if (s < best_score) {
      best_score = s;
      best = t->id;
    }
  }
  if (best < 0) throw AllTrialsFailed(vr.trace);

  CostMeter total;
  for (const auto& t : trials) {
    if (!t) continue;
    total.sample_gradients += t->meter.sample_gradients;
    total.selection_units += t->meter.selection_units;
    total.eval_forwards += t->meter.eval_forwards;
    TrialRecord rec;
    rec.id = t->id;
    rec.config = t->config;
    rec.epochs = t->epochs_done;
    rec.max_rung = t->max_rung;
    rec.val_accuracy = t->last_val_accuracy;
    rec.val_loss = t->last_val_loss;
    rec.cost = t->meter.billable();
    rec.failed = t->failed;
    result.trials.push_back(std::move(rec));
  }

  Trial& best_trial = *trials[static_cast<std::size_t>(best)];
  result.best_trial = best;
  result.best_config = best_trial.config;
  result.best_val_accuracy = best_trial.last_val_accuracy;
  result.tuning_cost = total.billable();
  result.selection_units = total.selection_units;

  if (cfg.strategy.strategy == SelectionStrategy::full) {
    CostMeter eval_meter;
    const LossReport test = evaluate(best_trial.model, data.test, &eval_meter);
    total.eval_forwards += eval_meter.eval_forwards;
    result.final_test_accuracy = test.accuracy;
    result.final_test_loss = test.mean_loss;
    result.final_trained = false;
    result.final_train_cost = 0;
    result.final_model = best_trial.model;
  } else {
    FinalTrainResult ft = final_train(best_trial.config, data, cfg.total_epochs, cfg.default_batch_size, cfg.seed);
    total.sample_gradients += ft.meter.sample_gradients;
    total.eval_forwards += ft.meter.eval_forwards;
    result.final_test_accuracy = ft.test_report.accuracy;
    result.final_test_loss = ft.test_report.mean_loss;
    result.final_trained = true;
    result.final_train_cost = ft.meter.billable();
    result.final_model = std::move(ft.model);
  }
  result.total_cost = total.billable();
  result.eval_forwards = total.eval_forwards;
  return result;
}

CompareResult compare_strategies(const ExperimentConfig& base) {
  const auto& strategies = base.compare.strategies;
  if (strategies.size() < 2 || std::find(strategies.begin(), strategies.end(), "full") == strategies.end()) {
    throw ConfigError("compare needs at least two strategies including 'full'");
  }

  CompareResult out;
  const auto run_one = [&](const std::string& strategy, double fraction) {
    ExperimentConfig cfg = base;
    cfg.strategy.strategy = selection_strategy_from_string(strategy);
    cfg.strategy.fraction = strategy == "full" ? 1.0 : fraction;
    log_info("compare: running ", strategy, " fraction=", cfg.strategy.fraction);
    out.runs.push_back(tune(cfg));
  };

  run_one("full", 1.0);
  for (const std::string& s : strategies) {
    if (s == "full") continue;
    for (const double f : base.compare.fractions) run_one(s, f);
  }

  const StrategyRunResult& full = out.runs.front();
  for (const StrategyRunResult& run : out.runs) {
    CompareRow row;
    row.strategy = run.strategy;
    row.fraction = run.fraction;
    row.total_cost = run.total_cost;
    row.test_accuracy = run.final_test_accuracy;
    row.speedup = static_cast<double>(full.total_cost) / static_cast<double>(run.total_cost);
    row.relative_test_error_pct = (full.final_test_accuracy - run.final_test_accuracy) * 100.0;
    out.rows.push_back(std::move(row));
  }
  return out;
}

ojson report_to_json(const ExperimentConfig& cfg, const StrategyRunResult& result) {
  return ojson{{"config", experiment_config_to_json(cfg)},
               {"strategy", result.strategy},
               {"fraction", result.fraction},
               {"best", ojson{{"trial", result.best_trial},
                              {"config", config_sample_to_json(result.best_config)},
                              {"val_accuracy", result.best_val_accuracy}}},
               {"final_test_accuracy", result.final_test_accuracy},
               {"final_test_loss", result.final_test_loss},
               {"final_trained", result.final_trained},
               {"cost", ojson{{"tuning", result.tuning_cost},
                              {"selection_units", result.selection_units},
                              {"final_train", result.final_train_cost},
                              {"total", result.total_cost},
                              {"eval_forwards", result.eval_forwards}}},
               {"makespan", result.makespan},
               {"n_trials", result.trials.size()}};
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_run_artifacts(const std::string& out_dir, const ExperimentConfig& cfg, const StrategyRunResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream out(out_dir + "/report.json");
    if (!out) throw ParseError("cannot write report.json in " + out_dir);
    out << report_to_json(cfg, result).dump(2) << '\n';
  }
  {
    std::ofstream out(out_dir + "/trials.csv");
    if (!out) throw ParseError("cannot write trials.csv in " + out_dir);
    out << "id";
    for (const auto& [name, domain] : cfg.space.domains) out << ',' << csv_escape(name);
    out << ",epochs,rung,val_accuracy,val_loss,cost,failed\n";
    for (const TrialRecord& t : result.trials) {
      out << t.id;
      for (const auto& [name, domain] : cfg.space.domains) {
        out << ',';
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::string>) {
                out << csv_escape(v);
              } else if constexpr (std::is_same_v<T, double>) {
                out << format_double(v);
              } else {
                out << v;
              }
            },
            t.config.at(name));
      }
      out << ',' << t.epochs << ',' << t.max_rung << ',' << format_double(t.val_accuracy) << ','
          << format_double(t.val_loss) << ',' << t.cost << ',' << (t.failed ? 1 : 0) << '\n';
    }
  }
  write_trace_jsonl(result.trace, out_dir + "/trace.jsonl");
  if (!result.final_model.layer_dims.empty()) save_checkpoint(result.final_model, out_dir + "/model.ckpt");
  if (!result.selection_log.empty()) {
    std::ofstream out(out_dir + "/selections.jsonl");
    for (const SelectionLogEntry& e : result.selection_log) {
      out << ojson{{"trial", e.trial},
                   {"epoch", e.epoch},
                   {"batch_indices", e.batch_indices},
                   {"weights", e.weights},
                   {"residual_norm", e.residual_norm}}
                 .dump()
          << '\n';
    }
  }
}

void write_scatter_csv(const std::string& path, const std::vector<CompareRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write scatter csv: " + path);
  out << "strategy,fraction,speedup,relative_test_error_pct,test_accuracy,total_cost\n";
  for (const CompareRow& r : rows) {
    out << csv_escape(r.strategy) << ',' << format_double(r.fraction) << ',' << format_double(r.speedup) << ','
        << format_double(r.relative_test_error_pct) << ',' << format_double(r.test_accuracy) << ',' << r.total_cost
        << '\n';
  }
}

std::vector<CompareRow> read_scatter_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scatter csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty scatter csv: " + path);
  std::vector<CompareRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    CompareRow row;
    std::getline(ss, row.strategy, ',');
    std::getline(ss, field, ',');
    row.fraction = std::stod(field);
    std::getline(ss, field, ',');
    row.speedup = std::stod(field);
    std::getline(ss, field, ',');
    row.relative_test_error_pct = std::stod(field);
    std::getline(ss, field, ',');
    row.test_accuracy = std::stod(field);
    std::getline(ss, field, ',');
    row.total_cost = static_cast<std::uint64_t>(std::stoull(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace coretune
