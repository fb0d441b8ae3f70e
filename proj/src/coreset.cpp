// SPDX-License-Identifier: Apache-2.0
#include "coretune/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coretune {

SelectionStrategy selection_strategy_from_string(const std::string& s) {
  if (s == "gss") return SelectionStrategy::gss;
  if (s == "random") return SelectionStrategy::random;
  if (s == "full") return SelectionStrategy::full;
  throw ConfigError("unknown selection strategy '" + s + "'");
}

std::string to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::gss: return "gss";
    case SelectionStrategy::random: return "random";
    case SelectionStrategy::full: return "full";
  }
  return "?";
}

void SelectionConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("selection fraction must lie in (0,1]");
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (epsilon < 0.0) throw ConfigError("epsilon must be nonnegative");
}

int batches_to_select(double fraction, int batch_count) {
  const int k = static_cast<int>(std::floor(fraction * static_cast<double>(batch_count)));
  return std::max(1, k);
}

Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda) {
  return nnls_solve(a, b, lambda, Eigen::VectorXd());
}

Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda,
                           const Eigen::VectorXd& warm_start) {
  if (a.cols() < 1) throw ConfigError("nnls needs at least one column");
  const long m = a.cols();

  // Largest eigenvalue of A^T A gives ||A||_2^2; the Gram matrix is reused in
  // every gradient evaluation.
  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::VectorXd atb = a.transpose() * b;
  double op_norm_sq = 0.0;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    op_norm_sq = es.eigenvalues().maxCoeff();
  }
  if (!(op_norm_sq > 0.0)) op_norm_sq = 1.0;  // all-zero matrix: any step works
  const double step = 1.0 / (op_norm_sq + lambda);

  constexpr double kKktTol = 1e-8;
  constexpr int kMaxIter = 10000;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  if (warm_start.size() == m) w = warm_start.cwiseMax(0.0);
  const auto objective = [&](const Eigen::VectorXd& v) {
    return (a * v - b).squaredNorm() + lambda * v.squaredNorm();
  };
  const auto half_gradient = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return gram * v - atb + lambda * v;
  };
  const auto kkt_violation = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& grad) {
    double violation = 0.0;
    for (long i = 0; i < m; ++i) {
      if (v(i) > 0.0) {
        violation = std::max(violation, std::abs(grad(i)));
      } else {
        violation = std::max(violation, std::max(0.0, -grad(i)));
      }
    }
    return violation;
  };

  // Least-squares refit on the current support, clipped to the feasible
  // orthant; adopted only when it improves the objective. This jumps the
  // fixed-step iteration across ill-conditioned faces it would otherwise
  // crawl over.
  const auto polish = [&](Eigen::VectorXd& v) {
    std::vector<long> support;
    for (long i = 0; i < m; ++i) {
      if (v(i) > 0.0) support.push_back(i);
    }
    if (support.empty()) return;
    Eigen::MatrixXd sub(a.rows() + (lambda > 0.0 ? m : 0), static_cast<long>(support.size()));
    Eigen::VectorXd rhs(sub.rows());
    rhs.head(a.rows()) = b;
    if (lambda > 0.0) rhs.tail(m).setZero();
    for (std::size_t i = 0; i < support.size(); ++i) {
      sub.col(static_cast<long>(i)).head(a.rows()) = a.col(support[i]);
      if (lambda > 0.0) {
        sub.col(static_cast<long>(i)).tail(m).setZero();
        sub(a.rows() + support[i], static_cast<long>(i)) = std::sqrt(lambda);
      }
    }
    const Eigen::VectorXd z = sub.colPivHouseholderQr().solve(rhs).cwiseMax(0.0);
    Eigen::VectorXd polished = Eigen::VectorXd::Zero(m);
    for (std::size_t i = 0; i < support.size(); ++i) polished(support[i]) = z(static_cast<long>(i));
    if (objective(polished) < objective(v)) v = polished;
  };

  // Nesterov-accelerated projection with the same Lipschitz step: an
  // objective-increase restart keeps the best-iterate guarantee, and the
  // budget is split into rounds with a support polish between them.
  Eigen::VectorXd best_w = w;
  double best_obj = objective(w);
  constexpr int kRounds = 4;
  bool converged = false;
  for (int round = 0; round < kRounds && !converged; ++round) {
    Eigen::VectorXd w_prev = w;
    Eigen::VectorXd y = w;
    double momentum = 1.0;
    for (int it = 0; it < kMaxIter / kRounds; ++it) {
      const Eigen::VectorXd w_next = (y - step * half_gradient(y)).cwiseMax(0.0);
      const Eigen::VectorXd grad_next = half_gradient(w_next);
      if (kkt_violation(w_next, grad_next) <= kKktTol) {
        w = w_next;
        converged = true;
        break;
      }
      const double obj_next = objective(w_next);
      if (obj_next > objective(w)) {
        // restart: drop momentum and retry as a plain projected step
        momentum = 1.0;
        y = w;
        w_prev = w;
        continue;
      }
      const double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      y = (w_next + ((momentum - 1.0) / momentum_next) * (w_next - w_prev)).cwiseMax(0.0);
      momentum = momentum_next;
      w_prev = w;
      w = w_next;
    }
    polish(w);
    if (objective(w) < best_obj) {
      best_obj = objective(w);
      best_w = w;
    }
  }
  if (objective(w) > best_obj) w = best_w;
  return w;
}

Coreset omp_select(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad, int b_k, double lambda,
                   double epsilon) {
  const int b_n = static_cast<int>(batch_grads.cols());
  if (b_n < 1) throw ConfigError("omp needs at least one batch gradient");
  if (b_k < 1) throw ConfigError("b_k must be >= 1");
  if (!batch_grads.allFinite() || !full_grad.allFinite()) throw ConfigError("gradients must be finite");
  if (b_k > b_n) {
    log_info("requested ", b_k, " batches but only ", b_n, " exist; clamping");
    b_k = b_n;
  }

  Coreset coreset;
  std::vector<char> selected(static_cast<std::size_t>(b_n), 0);
  Eigen::VectorXd residual = full_grad;
  Eigen::VectorXd w;

  while (static_cast<int>(coreset.batch_indices.size()) < b_k) {
    // Correlation with the current residual (the negated objective gradient
    // at the current weights). Only positive correlations can reduce the
    // objective under the nonnegativity constraint; when none remains the
    // KKT conditions already hold and the loop stops.
    int pick = -1;
    double best = 0.0;
    for (int j = 0; j < b_n; ++j) {
      if (selected[static_cast<std::size_t>(j)]) continue;
      const double c = batch_grads.col(j).dot(residual);
      if (c > best) {  // strict > keeps the lowest index on ties
        best = c;
        pick = j;
      }
    }
    if (pick < 0 && coreset.batch_indices.empty()) pick = 0;  // degenerate target: keep one batch
    if (pick < 0) break;
    selected[static_cast<std::size_t>(pick)] = 1;
    coreset.batch_indices.push_back(pick);

    const long m = static_cast<long>(coreset.batch_indices.size());
    Eigen::MatrixXd sub(batch_grads.rows(), m);
    for (long i = 0; i < m; ++i) sub.col(i) = batch_grads.col(coreset.batch_indices[static_cast<std::size_t>(i)]);
    Eigen::VectorXd warm(m);
    warm.setZero();
    if (w.size() == m - 1) warm.head(m - 1) = w;
    w = nnls_solve(sub, full_grad, lambda, warm);
    residual = full_grad - sub * w;

    const double objective = residual.squaredNorm() + lambda * w.squaredNorm();
    if (!coreset.objective_trace.empty()) {
      // Refitting over a superset can only help; allow solver-tolerance slack.
      const double prev = coreset.objective_trace.back();
      if (objective > prev + 1e-9 * (1.0 + prev)) {
        log_debug("omp objective increased from ", prev, " to ", objective);
      }
    }
    coreset.objective_trace.push_back(objective);
    if (objective <= epsilon) break;
  }

  coreset.weights.assign(w.data(), w.data() + w.size());
  coreset.residual_norm = residual.norm();
  return coreset;
}

namespace {

double batch_size_weighted_sum(const Coreset& coreset, const BatchPlan& plan) {
  double s = 0.0;
  for (std::size_t i = 0; i < coreset.batch_indices.size(); ++i) {
    s += coreset.weights[i] * static_cast<double>(plan.batches[static_cast<std::size_t>(coreset.batch_indices[i])].size());
  }
  return s;
}

double residual_of(const Coreset& coreset, const Eigen::MatrixXd& grads, const Eigen::VectorXd& full) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(full.size());
  for (std::size_t i = 0; i < coreset.batch_indices.size(); ++i) {
    acc += coreset.weights[i] * grads.col(coreset.batch_indices[i]);
  }
  return (acc - full).norm();
}

}  // namespace

Coreset select_coreset(const MlpModel& model, const Dataset& ds, const BatchPlan& plan, const SelectionConfig& cfg,
                       std::uint64_t seed, CostMeter* meter) {
  cfg.validate();
  const int b_n = plan.batch_count();
  const int b_k = batches_to_select(cfg.fraction, b_n);

  switch (cfg.strategy) {
    case SelectionStrategy::full: {
      Coreset coreset;
      coreset.batch_indices.resize(static_cast<std::size_t>(b_n));
      std::iota(coreset.batch_indices.begin(), coreset.batch_indices.end(), 0);
      coreset.weights.assign(static_cast<std::size_t>(b_n), 1.0);
      coreset.residual_norm = 0.0;
      return coreset;
    }
    case SelectionStrategy::random: {
      std::vector<int> order(static_cast<std::size_t>(b_n));
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(seed, "random-select"));
      rng.shuffle(order);
      Coreset coreset;
      coreset.batch_indices.assign(order.begin(), order.begin() + b_k);
      std::sort(coreset.batch_indices.begin(), coreset.batch_indices.end());
      coreset.weights.assign(static_cast<std::size_t>(b_k), 1.0);
      const LastLayerGradients grads = per_batch_last_layer_gradients(model, ds, plan);
      coreset.residual_norm = residual_of(coreset, grads.per_batch, grads.full);
      return coreset;
    }
    case SelectionStrategy::gss: {
      const LastLayerGradients grads = per_batch_last_layer_gradients(model, ds, plan);
      Coreset coreset = omp_select(grads.per_batch, grads.full, b_k, cfg.lambda, cfg.epsilon);
      // Calibrate so the weighted subset loss matches the full-data scale.
      const double weighted = batch_size_weighted_sum(coreset, plan);
      if (weighted > 1e-12) {
        const double scale = static_cast<double>(ds.n()) / weighted;
        for (double& w : coreset.weights) w *= scale;
      } else {
        // Degenerate fit (all weights ~0, e.g. a converged model): fall back
        // to counting weights so the calibration still holds.
        double selected_samples = 0.0;
        for (const int l : coreset.batch_indices) {
          selected_samples += static_cast<double>(plan.batches[static_cast<std::size_t>(l)].size());
        }
        coreset.weights.assign(coreset.weights.size(), static_cast<double>(ds.n()) / selected_samples);
      }
      coreset.residual_norm = residual_of(coreset, grads.per_batch, grads.full);
      if (meter != nullptr) meter->selection_units += static_cast<std::uint64_t>(b_n);
      return coreset;
    }
  }
  throw ConfigError("unreachable selection strategy");
}

}  // namespace coretune
