// SPDX-License-Identifier: Apache-2.0
// Per-iteration bookkeeping shared by the solvers.
#pragma once

#include <chrono>
#include <string>

#include "diplab/earlystop.hpp"
#include "diplab/solvers.hpp"

namespace diplab::detail {

class Recorder {
 public:
  Recorder(const SolverConfig& cfg, const InverseProblem& prob, std::string method);

  /// Records iteration t. Returns true when the run must end, either because
  /// the iterate is non-finite or the early-stop rule fired with halting on.
  bool record(std::size_t t, double loss, const Tensor& iterate);

  /// x_final is the output after the last step of a run that was not halted.
  SolveTrace finish(const Tensor& x_final, LeafValues state);

  bool halted() const noexcept { return halted_; }

 private:
  const SolverConfig& cfg_;
  const InverseProblem& prob_;
  double peak_ = 1.0;
  WmvDetector detector_;
  SolveTrace trace_;
  Tensor last_finite_;
  bool halted_ = false;
  std::chrono::steady_clock::time_point start_;
};

/// 1/2 ||A f - y||^2 and A f - y.
double data_loss(const InverseProblem& prob, const Tensor& f, Eigen::VectorXd& residual);

}  // namespace diplab::detail
