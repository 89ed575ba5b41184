// SPDX-License-Identifier: Apache-2.0
//
// First-order steppers shared by every solver.
#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "diplab/graph.hpp"

namespace diplab {

enum class OptimizerKind { gd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one parameter tensor.
struct AdamMoments {
  Tensor m;
  Tensor v;
};

/// One bias-corrected Adam update of `param` in place; `t` is the 1-based
/// step count after this update.
void adam_update(Tensor& param, AdamMoments& state, const Tensor& grad, double lr, std::size_t t,
                 const AdamConfig& cfg = {});

using LrScale = std::map<std::string, double, std::less<>>;

/// Steps every leaf present in the gradient map. Adam keeps per-leaf moments
/// and one shared step counter; moments persist across calls.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, AdamConfig cfg = {}) : kind_(kind), cfg_(cfg) {}

  /// `scale` multiplies the step size of the named leaves.
  void step(LeafValues& values, const Gradient& grad, double lr, const LrScale* scale = nullptr);

  OptimizerKind kind() const noexcept { return kind_; }
  std::size_t steps() const noexcept { return t_; }
  const std::map<std::string, AdamMoments, std::less<>>& moments() const noexcept { return moments_; }

 private:
  OptimizerKind kind_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, AdamMoments, std::less<>> moments_;
};

}  // namespace diplab
