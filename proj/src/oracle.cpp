// SPDX-License-Identifier: Apache-2.0
#include "coretune/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "coretune/coreset.hpp"
#include "coretune/scheduler.hpp"

namespace coretune::oracle {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Eigen::VectorXd nnls_active_set(const Eigen::MatrixXd& a_in, const Eigen::VectorXd& b_in, double lambda) {
  Eigen::MatrixXd a = a_in;
  Eigen::VectorXd b = b_in;
  if (lambda > 0.0) {
    // Ridge term as sqrt(lambda)*I rows appended to the system.
    const long m = a_in.cols();
    a.conservativeResize(a_in.rows() + m, Eigen::NoChange);
    a.bottomRows(m) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(m, m);
    b.conservativeResize(b_in.size() + m);
    b.tail(m).setZero();
  }

  const long m = a.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);
  constexpr double kTol = 1e-12;

  for (int outer = 0; outer < 30 * static_cast<int>(m) + 30; ++outer) {
    const Eigen::VectorXd w = a.transpose() * (b - a * x);
    int candidate = -1;
    double best_w = kTol;
    for (long i = 0; i < m; ++i) {
      if (!passive[static_cast<std::size_t>(i)] && w(i) > best_w) {
        best_w = w(i);
        candidate = static_cast<int>(i);
      }
    }
    if (candidate < 0) break;
    passive[static_cast<std::size_t>(candidate)] = true;

    for (int inner = 0; inner < 30 * static_cast<int>(m) + 30; ++inner) {
      std::vector<long> idx;
      for (long i = 0; i < m; ++i) {
        if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
      }
      Eigen::MatrixXd ap(a.rows(), static_cast<long>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) ap.col(static_cast<long>(i)) = a.col(idx[i]);
      const Eigen::VectorXd z = ap.colPivHouseholderQr().solve(b);

      bool feasible = true;
      for (long i = 0; i < z.size(); ++i) {
        if (z(i) <= kTol) {
          feasible = false;
          break;
        }
      }
      if (feasible) {
        x.setZero();
        for (std::size_t i = 0; i < idx.size(); ++i) x(idx[i]) = z(static_cast<long>(i));
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double zi = z(static_cast<long>(i));
        if (zi <= kTol) {
          const double xi = x(idx[i]);
          alpha = std::min(alpha, xi / (xi - zi));
        }
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        x(idx[i]) += alpha * (z(static_cast<long>(i)) - x(idx[i]));
        if (x(idx[i]) <= kTol) {
          x(idx[i]) = 0.0;
          passive[static_cast<std::size_t>(idx[i])] = false;
        }
      }
    }
  }
  return x;
}

double nnls_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda, const Eigen::VectorXd& w) {
  return (a * w - b).squaredNorm() + lambda * w.squaredNorm();
}

double exhaustive_best_objective(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad, int b_k,
                                 double lambda) {
  const int b_n = static_cast<int>(batch_grads.cols());
  double best = full_grad.squaredNorm();  // empty support
  std::vector<int> support;

  const auto refit = [&]() {
    Eigen::MatrixXd sub(batch_grads.rows(), static_cast<long>(support.size()));
    for (std::size_t i = 0; i < support.size(); ++i) sub.col(static_cast<long>(i)) = batch_grads.col(support[i]);
    const Eigen::VectorXd w = nnls_active_set(sub, full_grad, lambda);
    best = std::min(best, nnls_objective(sub, full_grad, lambda, w));
  };

  // Depth-first enumeration of every support of size <= b_k.
  const std::function<void(int)> recurse = [&](int from) {
    if (static_cast<int>(support.size()) == b_k) return;
    for (int j = from; j < b_n; ++j) {
      support.push_back(j);
      refit();
      recurse(j + 1);
      support.pop_back();
    }
  };
  recurse(0);
  return best;
}

double best_single_column_objective(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad,
                                    double lambda) {
  double best = full_grad.squaredNorm();
  for (long j = 0; j < batch_grads.cols(); ++j) {
    // min_{w>=0} ||a w - b||^2 + lambda w^2 has w* = max(0, a.b/(a.a+lambda)).
    const double aa = batch_grads.col(j).squaredNorm();
    const double ab = batch_grads.col(j).dot(full_grad);
    const double w = std::max(0.0, ab / (aa + lambda));
    const double obj = (batch_grads.col(j) * w - full_grad).squaredNorm() + lambda * w * w;
    best = std::min(best, obj);
  }
  return best;
}

double grid_min_objective_2d(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda, double hi,
                             double step) {
  if (a.cols() != 2) throw ConfigError("grid oracle expects a two-column system");
  // f(w) = w'Gw - 2c'w + b'b + lambda*|w|^2, expanded per grid point.
  const Eigen::MatrixXd g = a.transpose() * a;
  const Eigen::VectorXd c = a.transpose() * b;
  const double bb = b.squaredNorm();
  const long steps = static_cast<long>(std::llround(hi / step));

  double best = std::numeric_limits<double>::infinity();
  for (long i = 0; i <= steps; ++i) {
    const double w1 = static_cast<double>(i) * step;
    // f as a quadratic in w2 for fixed w1.
    const double c0 = (g(0, 0) + lambda) * w1 * w1 - 2.0 * c(0) * w1 + bb;
    const double c1 = 2.0 * (g(0, 1) * w1 - c(1));
    const double c2 = g(1, 1) + lambda;
    // Vertex of the parabola snapped to the grid brackets the row minimum.
    const double vertex = -c1 / (2.0 * c2);
    long lo_j = 0, hi_j = steps;
    if (vertex > 0.0 && vertex < hi) {
      lo_j = std::max<long>(0, static_cast<long>(std::floor(vertex / step)) - 1);
      hi_j = std::min<long>(steps, lo_j + 2);
    } else if (vertex >= hi) {
      lo_j = steps - 1;
    } else {
      hi_j = 1;
    }
    for (long j = lo_j; j <= hi_j; ++j) {
      const double w2 = static_cast<double>(j) * step;
      best = std::min(best, c0 + c1 * w2 + c2 * w2 * w2);
    }
  }
  return best;
}

std::vector<std::pair<int, int>> hyperband_closed_form(int r_max, int eta) {
  if (eta < 2) throw ConfigError("closed form needs integer eta >= 2");
  int s_max = 0;
  long long p = 1;
  while (p * eta <= r_max) {
    p *= eta;
    ++s_max;
  }
  std::vector<std::pair<int, int>> out;
  for (int s = s_max; s >= 0; --s) {
    long long eta_s = 1;
    for (int i = 0; i < s; ++i) eta_s *= eta;
    const long long num = static_cast<long long>(s_max + 1) * eta_s;
    const int n_s = static_cast<int>((num + s) / (s + 1));  // ceil for positive ints
    const int r_s = static_cast<int>(r_max / eta_s);
    out.emplace_back(n_s, std::max(1, r_s));
  }
  return out;
}

namespace {

// Forward pass reimplemented here so the kink-rejection rule does not depend
// on the production code path under test.
bool batch_clears_relu_kinks(const MlpModel& model, const Dataset& ds, const std::vector<int>& batch, double margin) {
  for (const int row : batch) {
    Eigen::VectorXd act = ds.features.row(row).transpose();
    for (int l = 0; l + 1 < model.n_layers(); ++l) {
      const Eigen::VectorXd z = model.weights[static_cast<std::size_t>(l)].transpose() * act +
                                model.biases[static_cast<std::size_t>(l)];
      if (z.cwiseAbs().minCoeff() < margin) return false;
      act = z.cwiseMax(0.0);
    }
  }
  return true;
}

double loss_only(const MlpModel& model, const Dataset& ds, const std::vector<int>& batch,
                 const std::vector<double>& weights) {
  Gradients scratch;
  return loss_and_grad(model, ds, batch, weights, scratch).mean_loss;
}

}  // namespace

double gradient_relative_error(const MlpModel& model, const Dataset& ds, const std::vector<int>& batch,
                               const std::vector<double>& weights, double h) {
  Gradients analytic;
  loss_and_grad(model, ds, batch, weights, analytic);

  MlpModel probe = model;
  double max_abs_grad = 0.0;
  double max_abs_diff = 0.0;
  const auto probe_param = [&](double& param, double analytic_value) {
    const double saved = param;
    param = saved + h;
    const double up = loss_only(probe, ds, batch, weights);
    param = saved - h;
    const double down = loss_only(probe, ds, batch, weights);
    param = saved;
    const double fd = (up - down) / (2.0 * h);
    max_abs_grad = std::max(max_abs_grad, std::abs(analytic_value));
    max_abs_diff = std::max(max_abs_diff, std::abs(fd - analytic_value));
  };

  for (int l = 0; l < model.n_layers(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    for (long i = 0; i < probe.weights[li].rows(); ++i) {
      for (long j = 0; j < probe.weights[li].cols(); ++j) {
        probe_param(probe.weights[li](i, j), analytic.weights[li](i, j));
      }
    }
    for (long i = 0; i < probe.biases[li].size(); ++i) {
      probe_param(probe.biases[li](i), analytic.biases[li](i));
    }
  }
  return max_abs_diff / std::max(max_abs_grad, 1e-8);
}

SuiteResult run_grad_suite(int instances, std::uint64_t seed) {
  const double t0 = now_seconds();
  SuiteResult res{"grad", true, instances, "", 0.0};
  Rng rng(derive_seed(seed, "grad-suite"));
  double worst = 0.0;

  for (int inst = 0; inst < instances; ++inst) {
    const int d = static_cast<int>(rng.uniform_int(2, 5));
    const int h1 = static_cast<int>(rng.uniform_int(2, 5));
    const int c = static_cast<int>(rng.uniform_int(2, 3));
    const bool deep = rng.next_double() < 0.5;
    std::vector<int> dims = deep ? std::vector<int>{d, h1, static_cast<int>(rng.uniform_int(2, 4)), c}
                                 : std::vector<int>{d, h1, c};
    MlpModel model = init_mlp(dims, rng.next_u64());

    const int n = static_cast<int>(rng.uniform_int(2, 6));
    Dataset ds;
    ds.n_classes = c;
    ds.split_tag = "train";
    std::vector<int> batch;
    std::vector<double> weights;
    // Rejection sampling keeps every hidden preactivation away from the
    // ReLU kink so central differences stay two-sided.
    for (int attempt = 0; attempt < 200 && static_cast<int>(batch.size()) < n; ++attempt) {
      Eigen::MatrixXd row(1, d);
      for (int j = 0; j < d; ++j) row(0, j) = rng.normal();
      Dataset probe;
      probe.features = row;
      probe.labels = {0};
      probe.n_classes = c;
      if (!batch_clears_relu_kinks(model, probe, {0}, 1e-3)) continue;
      ds.features.conservativeResize(ds.features.rows() + 1, d);
      ds.features.row(ds.features.rows() - 1) = row.row(0);
      ds.labels.push_back(static_cast<int>(rng.uniform_int(0, c - 1)));
      batch.push_back(static_cast<int>(ds.features.rows() - 1));
      weights.push_back(rng.uniform(0.1, 2.0));
    }
    if (static_cast<int>(batch.size()) < 2) continue;  // pathological model, skip

    const double err = gradient_relative_error(model, ds, batch, weights, 1e-4);
    worst = std::max(worst, err);
    if (err > 1e-4) {
      res.passed = false;
      res.detail = "instance " + std::to_string(inst) + " relative error " + std::to_string(err);
      break;
    }
  }
  if (res.passed) {
    std::ostringstream os;
    os << "max relative error " << worst;
    res.detail = os.str();
  }
  res.seconds = now_seconds() - t0;
  return res;
}

SuiteResult run_nnls_suite(int instances, std::uint64_t seed) {
  const double t0 = now_seconds();
  SuiteResult res{"nnls", true, instances, "", 0.0};
  Rng rng(derive_seed(seed, "nnls-suite"));
  double worst_gap = 0.0;

  for (int inst = 0; inst < instances; ++inst) {
    Eigen::MatrixXd a(3, 2);
    for (long i = 0; i < 3; ++i) {
      for (long j = 0; j < 2; ++j) a(i, j) = rng.normal();
    }
    // Target built from an interior optimum so the [0,5]^2 grid covers it.
    const Eigen::Vector2d w_true(rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0));
    Eigen::VectorXd b = a * w_true;
    for (long i = 0; i < 3; ++i) b(i) += 0.1 * rng.normal();
    const double lambda = rng.next_double() < 0.5 ? 0.0 : 0.1;

    const Eigen::VectorXd w = nnls_solve(a, b, lambda);
    const double solver_obj = nnls_objective(a, b, lambda, w);
    const double grid_obj = grid_min_objective_2d(a, b, lambda, 5.0, 1e-3);
    const double gap = solver_obj - grid_obj;
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-6) {
      res.passed = false;
      res.detail = "instance " + std::to_string(inst) + " solver worse than grid by " + std::to_string(gap);
      break;
    }
  }
  if (res.passed) {
    std::ostringstream os;
    os << "max solver-minus-grid gap " << worst_gap;
    res.detail = os.str();
  }
  res.seconds = now_seconds() - t0;
  return res;
}

SuiteResult run_omp_suite(int instances, std::uint64_t seed) {
  const double t0 = now_seconds();
  SuiteResult res{"omp", true, instances, "", 0.0};
  Rng rng(derive_seed(seed, "omp-suite"));

  for (int inst = 0; inst < instances; ++inst) {
    const int dim = static_cast<int>(rng.uniform_int(2, 4));
    const int b_n = static_cast<int>(rng.uniform_int(2, 8));
    Eigen::MatrixXd grads(dim, b_n);
    for (long j = 0; j < b_n; ++j) {
      for (long i = 0; i < dim; ++i) grads(i, j) = rng.normal();
    }
    // The full gradient is the batch sum plus noise, mirroring the real
    // selection problem's structure.
    Eigen::VectorXd full = grads.rowwise().sum();
    for (long i = 0; i < dim; ++i) full(i) += 0.1 * rng.normal();

    // Monotone objective along the greedy trace, at every b_k.
    const int b_k = static_cast<int>(rng.uniform_int(1, std::min(3, b_n)));
    const Coreset cs = omp_select(grads, full, b_k, 0.0, 0.0);
    for (std::size_t i = 1; i < cs.objective_trace.size(); ++i) {
      if (cs.objective_trace[i] > cs.objective_trace[i - 1] + 1e-9 * (1.0 + cs.objective_trace[i - 1])) {
        res.passed = false;
        res.detail = "instance " + std::to_string(inst) + " objective increased at step " + std::to_string(i);
      }
    }

    // Selecting every batch must match the global optimum from the
    // independent active-set route.
    const Coreset all = omp_select(grads, full, b_n, 0.0, 0.0);
    const double omp_obj = all.objective_trace.back();
    const Eigen::VectorXd w_ref = nnls_active_set(grads, full, 0.0);
    const double ref_obj = nnls_objective(grads, full, 0.0, w_ref);
    if (std::abs(omp_obj - ref_obj) > 1e-6 * (1.0 + ref_obj)) {
      res.passed = false;
      res.detail = "instance " + std::to_string(inst) + " full-support objective " + std::to_string(omp_obj) +
                   " vs active-set " + std::to_string(ref_obj);
    }
    if (!res.passed) break;
  }
  if (res.passed) res.detail = "greedy trace monotone; full support matches active-set optimum";
  res.seconds = now_seconds() - t0;
  return res;
}

SuiteResult run_hyperband_suite() {
  const double t0 = now_seconds();
  SuiteResult res{"hyperband", true, 2, "", 0.0};

  const std::vector<std::pair<int, int>> frozen{{81, 1}, {34, 3}, {15, 9}, {8, 27}, {5, 81}};
  const auto closed = hyperband_closed_form(81, 3);
  const auto brackets = hyperband_brackets(81, 3.0);
  if (closed != frozen || brackets.size() != frozen.size()) {
    res.passed = false;
    res.detail = "bracket table mismatch for (81,3)";
  } else {
    for (std::size_t i = 0; i < brackets.size(); ++i) {
      if (brackets[i].n0 != frozen[i].first || brackets[i].r0 != frozen[i].second) {
        res.passed = false;
        res.detail = "bracket " + std::to_string(i) + " differs from closed form";
        break;
      }
    }
  }

  const auto plan = sha_plan(27, 1, 3.0, 27);
  const std::vector<std::pair<int, int>> expect{{27, 1}, {9, 3}, {3, 9}, {1, 27}};
  if (res.passed) {
    if (plan.size() != expect.size()) {
      res.passed = false;
      res.detail = "sha plan length mismatch";
    } else {
      for (std::size_t i = 0; i < plan.size(); ++i) {
        if (plan[i].n != expect[i].first || plan[i].r != expect[i].second) {
          res.passed = false;
          res.detail = "sha round " + std::to_string(i) + " mismatch";
          break;
        }
      }
    }
  }
  if (res.passed) res.detail = "brackets(81,3) and sha_plan(27,1,3,27) match frozen tables";
  res.seconds = now_seconds() - t0;
  return res;
}

namespace {

std::map<int, int> max_rungs_from_trace(const std::vector<TraceEvent>& trace) {
  std::map<int, int> rungs;
  for (const TraceEvent& ev : trace) {
    if (ev.event != "finish") continue;
    auto [it, inserted] = rungs.emplace(ev.trial, ev.rung);
    if (!inserted) it->second = std::max(it->second, ev.rung);
  }
  return rungs;
}

}  // namespace

SuiteResult run_asha_suite() {
  const double t0 = now_seconds();
  SuiteResult res{"asha", true, 1, "", 0.0};

  // Fixed monotone score table: trial i scores i at every rung.
  const auto runner = [](const TrialScheduler::Assignment& a) {
    RunnerResult r;
    r.score = static_cast<double>(a.trial_id);
    r.cost_units = static_cast<double>(a.target_epochs);
    return r;
  };

  ShaScheduler sha(9, 1, 3.0, 9);
  const auto sha_run = run_virtual(sha, runner, 1);

  SchedulerConfig cfg;
  cfg.kind = SchedulerConfig::Kind::asha;
  cfg.eta = 3.0;
  cfg.min_resource = 1;
  cfg.max_resource = 9;
  AshaScheduler asha(cfg, 9);
  const auto asha_run = run_virtual(asha, runner, 1);

  if (max_rungs_from_trace(sha_run.trace) != max_rungs_from_trace(asha_run.trace)) {
    res.passed = false;
    res.detail = "serial asha and sha reach different per-trial max rungs";
  } else {
    res.detail = "serial asha matches sha per-trial max rungs on the fixed table";
  }
  res.seconds = now_seconds() - t0;
  return res;
}

std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, int instances, std::uint64_t seed) {
  std::vector<SuiteResult> out;
  for (const std::string& name : names) {
    if (name == "omp") {
      out.push_back(run_omp_suite(instances > 0 ? instances : 200, seed));
    } else if (name == "nnls") {
      out.push_back(run_nnls_suite(instances > 0 ? instances : 100, seed));
    } else if (name == "grad") {
      out.push_back(run_grad_suite(instances > 0 ? instances : 50, seed));
    } else if (name == "hyperband") {
      out.push_back(run_hyperband_suite());
    } else if (name == "asha") {
      out.push_back(run_asha_suite());
    } else {
      throw ConfigError("unknown oracle suite '" + name + "'");
    }
  }
  return out;
}

}  // namespace coretune::oracle
