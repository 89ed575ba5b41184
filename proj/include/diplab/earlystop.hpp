// SPDX-License-Identifier: Apache-2.0
//
// Windowed moving variance of the iterate stream and the patience-based
// stopping rule built on it.
#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>

#include "diplab/tensor.hpp"

namespace diplab {

struct EarlyStopConfig {
  std::size_t window = 100;
  std::size_t patience = 500;
  double eps_rel = 1e-3;

  void validate() const;
};

/// (1/W) sum_w ||x_w - mean||^2 over the W tensors of the window.
double wmv(std::span<const Tensor> window);

struct EsDecision {
  bool stop = false;
  std::optional<std::size_t> t_es;
};

/// Observes one iterate per call (iteration index = number of prior calls).
/// Once the window is full, each WMV either improves the running minimum by
/// more than eps_rel (resetting the stall counter) or counts as a stall. After
/// `patience` stalls it reports stop, with t_ES the iteration at which the
/// minimum was reached.
class WmvDetector {
 public:
  explicit WmvDetector(EarlyStopConfig cfg = {});

  EsDecision observe(const Tensor& x);

  /// WMV of the current window; NaN until the window is full.
  double last_wmv() const noexcept { return last_; }
  std::size_t observations() const noexcept { return count_; }
  std::optional<std::size_t> best_iteration() const noexcept { return best_t_; }
  double best_var() const noexcept { return best_; }
  /// Iterate recorded at best_iteration().
  const Tensor& best_iterate() const noexcept { return best_x_; }
  const EarlyStopConfig& config() const noexcept { return cfg_; }

 private:
  EarlyStopConfig cfg_;
  std::deque<Tensor> buffer_;
  std::size_t count_ = 0;
  std::size_t stall_ = 0;
  double last_;
  double best_;
  std::optional<std::size_t> best_t_;
  Tensor best_x_;
  bool stopped_ = false;
};

}  // namespace diplab
