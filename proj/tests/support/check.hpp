// SPDX-License-Identifier: Apache-2.0
// Shared numeric helpers for the test suites.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "diplab/graph.hpp"
#include "diplab/tensor.hpp"

namespace diplab::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// Largest relative discrepancy between reverse-mode and central-difference
/// gradients of <w, f(leaves)> over every entry of the listed leaves.
inline double fd_gradient_error(const ComputeGraph& g, LeafValues values, const std::vector<std::string>& wrt,
                                std::uint64_t seed, double h = 1e-6) {
  Tensor w = random_tensor(g.output_shape(), seed);
  auto objective = [&](const LeafValues& v) { return forward_eval(g, v).flat().dot(w.flat()); };
  Tape tape(g, values);
  Gradient grad = tape.backprop(w, wrt);
  double worst = 0.0;
  for (const auto& name : wrt) {
    Tensor& leaf = values.at(name);
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double keep = leaf[i];
      leaf[i] = keep + h;
      const double up = objective(values);
      leaf[i] = keep - h;
      const double down = objective(values);
      leaf[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grad.at(name)[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double d = b.norm();
  return (a - b).norm() / (d > 0 ? d : 1.0);
}

}  // namespace diplab::testing
