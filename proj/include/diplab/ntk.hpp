// SPDX-License-Identifier: Apache-2.0
//
// Empirical neural tangent kernel at a fixed parameter point and the linear
// output dynamics it induces:
//
//   f_{t+1} = f_t + eta K (A^T y - A^T A f_t),   K = J J^T.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diplab/graph.hpp"
#include "diplab/operators.hpp"

namespace diplab {

struct NtkOptions {
  /// Eigenvalues of K below rank_tol * lambda_max count as zero.
  double rank_tol = 1e-8;
  /// Largest Jacobian block (rows x cols) held in memory at once.
  std::size_t entry_budget = 50'000'000;
  /// Keep J when it fits the budget.
  bool keep_jacobian = true;
};

struct NtkModel {
  Eigen::MatrixXd jacobian;  // n x p, empty when not kept
  Eigen::MatrixXd kernel;    // n x n
  /// Eigenpairs of K, eigenvalues descending; columns of W are the left
  /// singular vectors of J and sigma = sqrt(max(eigenvalue, 0)).
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
  Eigen::VectorXd singular_values;
  double rank_tol = 1e-8;

  std::size_t size() const { return static_cast<std::size_t>(kernel.rows()); }
  std::size_t rank() const;
  bool singular() const { return rank() < size(); }
  /// lambda_max / lambda_min; infinite when lambda_min <= 0.
  double condition_number() const;
  /// K^{1/2} with eigenvalues below the rank cutoff set to zero.
  Eigen::MatrixXd sqrt_kernel() const;

  static NtkModel from_kernel(Eigen::MatrixXd kernel, double rank_tol = 1e-8);
};

/// Kernel of the flattened graph output with respect to the `wrt` leaves.
/// The Jacobian is streamed leaf-group by leaf-group when it exceeds the
/// entry budget; Error(budget) if a single leaf or K itself does not fit.
NtkModel build_ntk(const ComputeGraph& graph, const LeafValues& at, std::span<const std::string> wrt,
                   const NtkOptions& opts = {});

struct FilterResult {
  /// f_t for t = 0, cadence, 2 cadence, ..., and always t = T.
  std::vector<std::size_t> iterations;
  std::vector<Eigen::VectorXd> iterates;
  double step_limit = 0.0;  // 2 / ||K^{1/2} A^T A K^{1/2}||
  bool step_ok = true;      // eta < step_limit
};

/// Runs the linear recursion for T steps from f0 (zero when empty).
FilterResult filter_iterate(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& y, double eta,
                            std::size_t steps, const Eigen::VectorXd& f0 = {}, std::size_t cadence = 1);

/// 2 / lambda_max(A K A^T).
double step_limit(const NtkModel& model, const LinearOperator& op);

/// (sum_i sigma_i^{-2} <w_i, x>^2) * sum_{i > 2m/3} sigma_i^2 over the
/// nonzero spectrum (1-based i); the universal constant is left out.
double spectral_bound(const NtkModel& model, const Eigen::VectorXd& x_star, std::size_t m);

enum class RecoveryCase { case1, case2, case3, unclassified };
std::string to_string(RecoveryCase c);

struct RecoveryReport {
  RecoveryCase label = RecoveryCase::unclassified;
  bool kernel_singular = false;
  /// Limit error f_inf - x predicted for the label.
  Eigen::VectorXd predicted_error;
  /// Exact limit error K^{1/2} (A K^{1/2})^+ A x - x, valid in every case.
  Eigen::VectorXd exact_error;
  bool error_nonzero = false;
  Eigen::VectorXd null_intersection_component;  // P_{N(A) cap R(K)} x
  Eigen::VectorXd kernel_null_component;        // P_{N(K)} x
  Eigen::VectorXd operator_null_component;      // P_{N(A)} x
  std::size_t intersection_dim = 0;
};

/// Noiseless limit behaviour of the recursion from f0 = 0 with y = A x.
RecoveryReport classify_recovery(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& x_star,
                                 double tol = 1e-8);

/// Expected ||f_t - x||^2 for t = 0..T from f0 = 0 and y = A x + N(0, sigma^2 I):
/// ||(I - eta K A^T A)^t x||^2 + sigma^2 ||(I - (I - eta K A^T A)^t) A^+||_F^2.
std::vector<double> mse_curve(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& x_star,
                              double sigma, double eta, std::size_t steps);

/// Moore-Penrose pseudoinverse, singular values below rtol * s_max dropped.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rtol = 1e-10);

}  // namespace diplab
