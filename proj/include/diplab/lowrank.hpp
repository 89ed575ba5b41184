// SPDX-License-Identifier: Apache-2.0
//
// Factored matrix sensing with symmetric measurements
//
//   A(X)_i = <A_i, X>,   X = U U^T,
//
// its gradient flow, the PSD nuclear-norm program it is biased towards, and
// the robust (X, s) variant with a sparse measurement corruption.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diplab {

/// Symmetric n x n measurement matrices, no structure assumed.
struct MeasurementSet {
  std::vector<Eigen::MatrixXd> mats;

  std::size_t size() const noexcept { return mats.size(); }
  std::size_t dim() const noexcept { return mats.empty() ? 0 : static_cast<std::size_t>(mats[0].rows()); }
  Eigen::VectorXd apply(const Eigen::MatrixXd& x) const;
  /// A^*(r) = sum_i r_i A_i.
  Eigen::MatrixXd adjoint(const Eigen::VectorXd& r) const;
  /// Largest ||A_i A_j - A_j A_i||_F over all pairs.
  double commutator_norm() const;
  /// Error(invalid_argument) unless non-empty, square, equal-sized, symmetric.
  void validate() const;
};

/// Pairwise commuting measurements A_i = V diag(D_i) V^T with one shared
/// orthonormal V.
class CommutingMeasurementSet {
 public:
  /// Finds the common eigenbasis; Error(invalid_argument) if the matrices do
  /// not commute to `tol`.
  static CommutingMeasurementSet from_matrices(std::vector<Eigen::MatrixXd> mats, double tol = 1e-10);
  /// Row i of `spectra` (m x n) holds the eigenvalues of A_i along the
  /// columns of `basis`.
  static CommutingMeasurementSet from_spectra(Eigen::MatrixXd basis, Eigen::MatrixXd spectra);
  /// A_i = diag(D_i).
  static CommutingMeasurementSet diagonal(Eigen::MatrixXd spectra);
  /// Random orthogonal V and i.i.d. U(0, 1) spectra.
  static CommutingMeasurementSet random(std::size_t n, std::size_t m, std::uint64_t seed);

  const MeasurementSet& measurements() const noexcept { return set_; }
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }
  const Eigen::MatrixXd& spectra() const noexcept { return spectra_; }
  std::size_t size() const noexcept { return set_.size(); }
  std::size_t dim() const noexcept { return set_.dim(); }
  Eigen::VectorXd apply(const Eigen::MatrixXd& x) const { return set_.apply(x); }
  Eigen::MatrixXd adjoint(const Eigen::VectorXd& r) const { return set_.adjoint(r); }
  /// V diag(lambda) V^T.
  Eigen::MatrixXd compose(const Eigen::VectorXd& lambda) const;

 private:
  MeasurementSet set_;
  Eigen::MatrixXd basis_;
  Eigen::MatrixXd spectra_;
};

/// Planted instance whose nuclear-norm solution is X_true:
/// X_true = V diag(lambda) V^T with `rank` nonzeros and a strict dual
/// certificate built into the spectra.
struct PlantedInstance {
  CommutingMeasurementSet meas;
  Eigen::MatrixXd x_true;
  Eigen::VectorXd y;
};
PlantedInstance planted_instance(std::size_t n, std::size_t m, std::size_t rank, std::uint64_t seed);

/// U0 = alpha * Q with Q an n x r matrix of orthonormal columns, so
/// X0 = alpha^2 Q Q^T (alpha^2 I when r = n).
Eigen::MatrixXd scaled_init(std::size_t n, std::size_t r, double alpha, std::uint64_t seed);

struct FlowOptions {
  double dt = 1e-2;
  double horizon = 2e3;
  /// Stop once ||A(X) - y|| drops below this.
  double residual_tol = 1e-8;
  /// Record every k-th accepted step (the first and last are always kept).
  std::size_t record_every = 100;
  /// Abort when halving pushes dt below this.
  double min_dt = 1e-10;
  /// Experimental X = U W^T variant with W0 = U0.
  bool asymmetric = false;
};

struct FlowState {
  Eigen::MatrixXd u;
  Eigen::MatrixXd w;  // asymmetric variant only
  double t = 0.0;
  /// s_t = -int_0^t r dt.
  Eigen::VectorXd s;
  double loss = 0.0;  // 1/2 ||A(X) - y||^2

  Eigen::MatrixXd x() const;
};

struct FlowResult {
  std::vector<FlowState> trajectory;
  FlowState final_state;
  bool converged = false;
  std::size_t steps = 0;
  std::size_t halvings = 0;
};

/// RK4 on dU/dt = -A^*(r) U, ds/dt = -r, r = A(U U^T) - y, with dt halved
/// whenever a step would increase the loss. Error(divergence) when dt
/// underflows or the state becomes non-finite.
FlowResult gradient_flow(const MeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& u0,
                         const FlowOptions& opts = {});

/// exp(M) for symmetric M.
Eigen::MatrixXd symmetric_expm(const Eigen::MatrixXd& m);
/// exp(A^*(s)) X0 exp(A^*(s)).
Eigen::MatrixXd closed_form_iterate(const MeasurementSet& meas, const Eigen::MatrixXd& x0, const Eigen::VectorXd& s);

struct NuclearSolution {
  Eigen::MatrixXd x;
  Eigen::VectorXd lambda;  // eigenvalues along the common basis
  double objective = 0.0;  // ||X||_* = sum(lambda)
};

/// min ||X||_* s.t. A(X) = y, X PSD, through the diagonal LP
/// min 1^T lambda s.t. D lambda = y, lambda >= 0. Error(infeasible).
NuclearSolution nuclear_oracle(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y);
/// Error(invalid_argument) for non-commuting sets.
NuclearSolution nuclear_oracle(const MeasurementSet& meas, const Eigen::VectorXd& y);

struct KktCertificate {
  bool pass = false;
  /// "ok", "primal-infeasible", "not-psd", "dual-infeasible", "slackness".
  std::string reason;
  Eigen::VectorXd nu;
  double primal_residual = 0.0;  // ||A(X) - y|| / max(1, ||y||)
  double psd_violation = 0.0;    // max(0, -lambda_min(X)) / max(1, lambda_max(X))
  double dual_violation = 0.0;   // max(0, lambda_max(A^*(nu)) - 1)
  double slackness = 0.0;        // ||(I - A^*(nu)) X||_F / max(1, ||X||_F)
};

/// Dual vector by least squares on (I - A^*(nu)) Q = 0 over the range Q of
/// X (eigenvalues above tol * lambda_max); for commuting sets a feasibility
/// LP in the common basis is tried when the least-squares multiplier is not
/// dual feasible.
KktCertificate kkt_check(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                         double tol);

struct DopSolution {
  Eigen::MatrixXd x;
  Eigen::VectorXd lambda;  // eigenvalues of X along the common basis
  Eigen::VectorXd s;
  double objective = 0.0;  // ||X||_* + (1/alpha) ||s||_1
};

/// min ||X||_* + (1/alpha) ||s||_1 s.t. A(X) + s = y, X PSD.
DopSolution dop_convex_solve(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y, double alpha);

struct DopFactoredOptions {
  /// Step-size ratio of (g, h) to U.
  double alpha = 1.0;
  double lr = 1e-2;
  std::size_t steps = 20000;
  double init = 1e-4;
  /// Columns of U; 0 means n.
  std::size_t rank = 0;
  std::uint64_t seed = 0;
};

struct DopFactoredResult {
  Eigen::MatrixXd x;
  Eigen::VectorXd s;  // g*g - h*h
  Eigen::MatrixXd u;
  Eigen::VectorXd g, h;
  double loss = 0.0;
};

/// Gradient descent on 1/2 ||A(U U^T) + g*g - h*h - y||^2 with step lr for U
/// and alpha * lr for g, h. Error(divergence) on non-finite iterates.
DopFactoredResult dop_factored(const MeasurementSet& meas, const Eigen::VectorXd& y, const DopFactoredOptions& opts);

/// Numerical rank: eigenvalues of the symmetric part above rel * lambda_max.
std::size_t numerical_rank(const Eigen::MatrixXd& x, double rel = 1e-3);

}  // namespace diplab
