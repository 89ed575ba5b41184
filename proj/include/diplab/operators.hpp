// SPDX-License-Identifier: Apache-2.0
//
// Forward models A and measurement-noise models.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diplab/tensor.hpp"

namespace diplab {

enum class OperatorKind { identity, mask_inpainting, gaussian_cs, subsampled_dft };

std::string to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(const std::string& s);

/// Dense linear forward model y = A x with A m x n.
///
/// Every operator carries its explicit matrix; apply and adjoint go through
/// that realization so they agree with it exactly.
class LinearOperator {
 public:
  LinearOperator(OperatorKind kind, Eigen::MatrixXd matrix);

  static LinearOperator identity(std::size_t n);
  /// Keeps the listed coordinates, in the given order.
  static LinearOperator mask(std::size_t n, const std::vector<std::size_t>& keep);
  /// Mask that removes the contiguous block [start, start + length).
  static LinearOperator box_mask(std::size_t n, std::size_t start, std::size_t length);
  /// i.i.d. N(0, 1/m) entries.
  static LinearOperator gaussian_cs(std::size_t m, std::size_t n, std::uint64_t seed);
  /// Rows of the unitary DFT for the listed frequencies (0 <= k <= n/2),
  /// real part then imaginary part. Frequencies 0 and n/2 contribute a single
  /// real row. Paired rows are scaled by sqrt(2) so the full stack is
  /// orthonormal.
  static LinearOperator subsampled_dft(std::size_t n, const std::vector<std::size_t>& frequencies);

  OperatorKind kind() const noexcept { return kind_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(matrix_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(matrix_.cols()); }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }

  /// y = A x. Accepts any tensor with n elements; returns shape [m].
  Tensor apply(const Tensor& x) const;
  /// A^T w, reshaped to `signal_shape` (defaults to [n]).
  Tensor adjoint(const Tensor& w, const Shape& signal_shape = {}) const;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return matrix_ * x; }
  Eigen::VectorXd adjoint(const Eigen::VectorXd& w) const { return matrix_.transpose() * w; }

  std::size_t rank(double rel_tol = 1e-10) const;
  bool full_row_rank(double rel_tol = 1e-10) const { return rank(rel_tol) == rows(); }

 private:
  OperatorKind kind_;
  Eigen::MatrixXd matrix_;
};

/// Orthogonal projector onto N(A), built from the SVD of the realization.
Eigen::MatrixXd null_space_projector(const LinearOperator& op, double rel_tol = 1e-10);

enum class NoiseKind { gaussian, sparse_impulse };

struct NoiseModel {
  NoiseKind kind = NoiseKind::gaussian;
  double sigma = 0.0;      // gaussian std, signal units
  double sparsity = 0.0;   // fraction of entries hit by impulses
  double amplitude = 1.0;  // impulse magnitude; sign is random
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corruption {
  Tensor y;
  std::vector<std::size_t> impulse_support;  // sorted; empty for gaussian noise
};

/// y + realized noise, deterministic given the seed.
Tensor corrupt(const Tensor& y, const NoiseModel& noise);
Corruption corrupt_with_support(const Tensor& y, const NoiseModel& noise);

}  // namespace diplab
