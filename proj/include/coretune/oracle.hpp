// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "coretune/model.hpp"

namespace coretune::oracle {

// Independent verification routes. Everything here recomputes its expected
// values through a different algorithm than the production path it checks:
// active-set NNLS vs projected gradient, exhaustive subset search vs greedy
// OMP, integer closed forms vs the scheduler's plan builder, and central
// finite differences vs backpropagation.

struct SuiteResult {
  std::string name;
  bool passed = false;
  int instances = 0;
  std::string detail;
  double seconds = 0.0;
};

/// Lawson-Hanson active-set NNLS; lambda handled by ridge augmentation.
Eigen::VectorXd nnls_active_set(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda);

double nnls_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda, const Eigen::VectorXd& w);

/// Minimum objective over every size-<=b_k support, each refit with the
/// active-set solver. Exponential; intended for b_N <= 12 or so.
double exhaustive_best_objective(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad, int b_k,
                                 double lambda);

/// Best objective achievable with a single column (closed form).
double best_single_column_objective(const Eigen::MatrixXd& batch_grads, const Eigen::VectorXd& full_grad,
                                    double lambda);

/// Dense grid minimum of ||Aw-b||^2 + lambda*||w||^2 over w in [0,hi]^2 with
/// the given step. Requires a two-column system.
double grid_min_objective_2d(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda, double hi,
                             double step);

/// Hyperband bracket sizes from exact integer arithmetic (requires integer
/// eta): (n_s, r_s) for s = s_max down to 0.
std::vector<std::pair<int, int>> hyperband_closed_form(int r_max, int eta);

/// Central-difference gradient check of the weighted batch loss; returns the
/// max component error relative to the gradient's infinity norm.
double gradient_relative_error(const MlpModel& model, const Dataset& ds, const std::vector<int>& batch,
                               const std::vector<double>& weights, double h);

SuiteResult run_grad_suite(int instances, std::uint64_t seed);
SuiteResult run_nnls_suite(int instances, std::uint64_t seed);
SuiteResult run_omp_suite(int instances, std::uint64_t seed);
SuiteResult run_hyperband_suite();
SuiteResult run_asha_suite();

std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, int instances, std::uint64_t seed);

}  // namespace coretune::oracle
