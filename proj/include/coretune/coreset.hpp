// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "coretune/model.hpp"

namespace coretune {

enum class SelectionStrategy { gss, random, full };

SelectionStrategy selection_strategy_from_string(const std::string& s);
std::string to_string(SelectionStrategy s);

struct SelectionConfig {
  double fraction = 0.1;    // k/N in (0,1]
  double lambda = 0.0;      // weight regularization
  double epsilon = 1e-10;   // residual tolerance for the greedy loop
  SelectionStrategy strategy = SelectionStrategy::gss;

  void validate() const;
};

/// b_k = max(1, floor(fraction * b_N)).
int batches_to_select(double fraction, int batch_count);

/// Selected mini-batches with nonnegative weights. residual_norm is the L2
/// norm of (sum_l w_l g_l - g_full) recomputed from the stored gradients;
/// objective_trace records ||Aw-b||^2 + lambda*||w||^2 after each greedy
/// iteration.
struct Coreset {
  std::vector<int> batch_indices;
  std::vector<double> weights;
  double residual_norm = 0.0;
  std::vector<double> objective_trace;
};

/// argmin_{w>=0} ||Aw - b||^2 + lambda*||w||^2 by projected gradient with the
/// Lipschitz step 1/(||A||_2^2 + lambda), stopping at KKT violation <= 1e-8
/// or 10000 iterations, then one feasibility-checked least-squares polish on
/// the converged support. Always returns the best feasible iterate.
Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda);
Eigen::VectorXd nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda,
                           const Eigen::VectorXd& warm_start);

/// Greedy gradient matching: repeatedly add the unselected batch most
/// correlated with the current residual (ties to the lowest index), refit
/// nonnegative weights over the selected set, and stop at b_k batches or
/// once the objective drops to epsilon. b_k larger than the number of
/// batches clamps with a warning.
Coreset omp_select(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad, int b_k, double lambda,
                   double epsilon);

/// Strategy dispatch over a model/dataset/plan. gss runs last-layer gradient
/// matching and rescales weights so sum_l w_l*|batch_l| = N; random draws b_k
/// batches uniformly with unit weights; full selects every batch with unit
/// weights and zero residual by convention. gss charges b_N forward-
/// equivalent units to the meter's selection counter.
Coreset select_coreset(const MlpModel& model, const Dataset& ds, const BatchPlan& plan, const SelectionConfig& cfg,
                       std::uint64_t seed, CostMeter* meter = nullptr);

}  // namespace coretune
