// SPDX-License-Identifier: Apache-2.0
//
// Dense two-phase simplex for small linear programs in standard form
//
//   minimize c^T x  subject to  A x = b,  x >= 0.
#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Dense>

namespace diplab {

enum class LpStatus { optimal, infeasible, unbounded };

std::string to_string(LpStatus s);

struct LpResult {
  LpStatus status = LpStatus::infeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
  std::size_t pivots = 0;
};

struct LpOptions {
  /// Pivot and feasibility tolerance, relative to the data scale.
  double tol = 1e-10;
  std::size_t max_pivots = 100000;
};

/// Bland's rule on a dense tableau, so the method terminates on degenerate
/// problems. Error(invalid_argument) on inconsistent sizes, Error(budget)
/// when max_pivots is exhausted.
LpResult solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& opts = {});

}  // namespace diplab
