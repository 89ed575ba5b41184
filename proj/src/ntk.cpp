// SPDX-License-Identifier: Apache-2.0
#include "diplab/ntk.hpp"

#include <cmath>
#include <limits>

#include "diplab/error.hpp"

namespace diplab {

std::size_t NtkModel::rank() const {
  if (eigenvalues.size() == 0) return 0;
  const double top = eigenvalues(0);
  if (top <= 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues(i) > rank_tol * top) ++r;
  return r;
}

double NtkModel::condition_number() const {
  const double lo = eigenvalues(eigenvalues.size() - 1);
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return eigenvalues(0) / lo;
}

Eigen::MatrixXd NtkModel::sqrt_kernel() const {
  const auto r = static_cast<Eigen::Index>(rank());
  const Eigen::MatrixXd w = eigenvectors.leftCols(r);
  return w * eigenvalues.head(r).cwiseSqrt().asDiagonal() * w.transpose();
}

NtkModel NtkModel::from_kernel(Eigen::MatrixXd kernel, double rank_tol) {
  require(kernel.rows() == kernel.cols() && kernel.rows() > 0, ErrorKind::shape, "kernel must be square");
  require(rank_tol > 0.0, ErrorKind::invalid_argument, "rank_tol must be positive");
  NtkModel m;
  m.rank_tol = rank_tol;
  m.kernel = 0.5 * (kernel + kernel.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.kernel);
  require(es.info() == Eigen::Success, ErrorKind::divergence, "kernel eigendecomposition failed");
  // Eigen sorts ascending.
  m.eigenvalues = es.eigenvalues().reverse();
  m.eigenvectors = es.eigenvectors().rowwise().reverse();
  m.singular_values = m.eigenvalues.cwiseMax(0.0).cwiseSqrt();
  return m;
}

NtkModel build_ntk(const ComputeGraph& graph, const LeafValues& at, std::span<const std::string> wrt,
                   const NtkOptions& opts) {
  const std::size_t n = graph.output_size();
  require(n * n <= opts.entry_budget, ErrorKind::budget,
          "kernel of size " + std::to_string(n) + " exceeds the entry budget");
  const std::size_t p = parameter_count(graph, wrt);
  if (n * p <= opts.entry_budget) {
    Eigen::MatrixXd j = jacobian(graph, at, wrt, opts.entry_budget);
    NtkModel m = NtkModel::from_kernel(j * j.transpose(), opts.rank_tol);
    if (opts.keep_jacobian) m.jacobian = std::move(j);
    return m;
  }

  // Group consecutive leaves so each block of J fits the budget.
  std::vector<std::vector<std::string>> groups(1);
  std::size_t used = 0;
  for (const auto& name : wrt) {
    const std::size_t sz = shape_numel(graph.leaf(name).shape);
    require(n * sz <= opts.entry_budget, ErrorKind::budget,
            "Jacobian block for leaf '" + name + "' exceeds the entry budget");
    if (used + sz > opts.entry_budget / n && !groups.back().empty()) {
      groups.emplace_back();
      used = 0;
    }
    groups.back().push_back(name);
    used += sz;
  }

  Tape tape(graph, at);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Tensor seed(graph.output_shape());
  for (const auto& group : groups) {
    const std::size_t pg = parameter_count(graph, group);
    Eigen::MatrixXd jg(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pg));
    for (std::size_t i = 0; i < n; ++i) {
      seed[i] = 1.0;
      Gradient g = tape.backprop(seed, group);
      seed[i] = 0.0;
      Eigen::Index col = 0;
      for (const auto& name : group) {
        const Tensor& t = g.at(name);
        jg.row(static_cast<Eigen::Index>(i)).segment(col, static_cast<Eigen::Index>(t.size())) = t.flat().transpose();
        col += static_cast<Eigen::Index>(t.size());
      }
    }
    k.noalias() += jg * jg.transpose();
  }
  return NtkModel::from_kernel(std::move(k), opts.rank_tol);
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rtol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  const double top = s.size() ? s(0) : 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rtol * top) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double step_limit(const NtkModel& model, const LinearOperator& op) {
  require(op.cols() == model.size(), ErrorKind::shape, "operator and kernel sizes differ");
  const Eigen::MatrixXd& a = op.matrix();
  Eigen::MatrixXd b = a * model.kernel * a.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (b + b.transpose()), Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().maxCoeff();
  return top > 0.0 ? 2.0 / top : std::numeric_limits<double>::infinity();
}

FilterResult filter_iterate(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& y, double eta,
                            std::size_t steps, const Eigen::VectorXd& f0, std::size_t cadence) {
  const auto n = static_cast<Eigen::Index>(model.size());
  require(op.cols() == model.size(), ErrorKind::shape, "operator and kernel sizes differ");
  require(y.size() == static_cast<Eigen::Index>(op.rows()), ErrorKind::shape, "measurement size mismatch");
  require(f0.size() == 0 || f0.size() == n, ErrorKind::shape, "f0 size mismatch");
  require(eta > 0.0, ErrorKind::invalid_argument, "eta must be positive");
  require(cadence >= 1, ErrorKind::invalid_argument, "cadence must be at least 1");
  FilterResult out;
  out.step_limit = step_limit(model, op);
  out.step_ok = eta < out.step_limit;

  const Eigen::MatrixXd& a = op.matrix();
  const Eigen::MatrixXd ka = model.kernel * a.transpose();
  const Eigen::VectorXd drive = eta * (ka * y);
  const Eigen::MatrixXd gain = eta * (ka * a);
  Eigen::VectorXd f = f0.size() ? f0 : Eigen::VectorXd::Zero(n);
  for (std::size_t t = 0;; ++t) {
    if (t % cadence == 0 || t == steps) {
      out.iterations.push_back(t);
      out.iterates.push_back(f);
    }
    if (t == steps) break;
    f += drive - gain * f;
  }
  return out;
}

double spectral_bound(const NtkModel& model, const Eigen::VectorXd& x_star, std::size_t m) {
  const std::size_t n = model.size();
  require(x_star.size() == static_cast<Eigen::Index>(n), ErrorKind::shape, "signal size mismatch");
  require(m >= 12, ErrorKind::invalid_argument, "spectral bound needs m >= 12");
  const std::size_t head = 2 * m / 3;
  require(head < n, ErrorKind::invalid_argument, "spectral bound needs floor(2m/3) < n");
  const std::size_t r = model.rank();
  double smooth = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double c = model.eigenvectors.col(static_cast<Eigen::Index>(i)).dot(x_star);
    smooth += c * c / model.eigenvalues(static_cast<Eigen::Index>(i));
  }
  double tail = 0.0;
  for (std::size_t i = head; i < r; ++i) tail += model.eigenvalues(static_cast<Eigen::Index>(i));
  return smooth * tail;
}

std::string to_string(RecoveryCase c) {
  switch (c) {
    case RecoveryCase::case1: return "case1";
    case RecoveryCase::case2: return "case2";
    case RecoveryCase::case3: return "case3";
    case RecoveryCase::unclassified: return "unclassified";
  }
  return "unknown";
}

RecoveryReport classify_recovery(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& x_star,
                                 double tol) {
  const auto n = static_cast<Eigen::Index>(model.size());
  require(op.cols() == model.size(), ErrorKind::shape, "operator and kernel sizes differ");
  require(x_star.size() == n, ErrorKind::shape, "signal size mismatch");
  require(op.full_row_rank(), ErrorKind::invalid_argument, "forward operator must have full row rank");
  const Eigen::MatrixXd& a = op.matrix();

  RecoveryReport rep;
  const auto r = static_cast<Eigen::Index>(model.rank());
  rep.kernel_singular = r < n;
  const Eigen::MatrixXd range = model.eigenvectors.leftCols(r);
  const Eigen::MatrixXd null_k = model.eigenvectors.rightCols(n - r);
  rep.kernel_null_component = null_k * (null_k.transpose() * x_star);
  rep.operator_null_component = null_space_projector(op) * x_star;

  // N(A) cap R(K): directions of R(K) that A annihilates; the principal
  // cosines between the subspaces equal 1 there.
  Eigen::JacobiSVD<Eigen::MatrixXd> nsvd(a, Eigen::ComputeFullV);
  const Eigen::Index m = static_cast<Eigen::Index>(op.rows());
  const Eigen::MatrixXd null_a = nsvd.matrixV().rightCols(n - m);
  rep.null_intersection_component = Eigen::VectorXd::Zero(n);
  if (r > 0 && n - m > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> isvd(null_a.transpose() * range, Eigen::ComputeFullV);
    const auto& s = isvd.singularValues();
    Eigen::Index k = 0;
    while (k < s.size() && s(k) > 1.0 - tol) ++k;
    rep.intersection_dim = static_cast<std::size_t>(k);
    if (k > 0) {
      const Eigen::MatrixXd basis = range * isvd.matrixV().leftCols(k);
      rep.null_intersection_component = basis * (basis.transpose() * x_star);
    }
  }

  const Eigen::MatrixXd ks = model.sqrt_kernel();
  const Eigen::MatrixXd limit_map = ks * pseudo_inverse(a * ks, 1e-12) * a;
  rep.exact_error = limit_map * x_star - x_star;
  const double scale = std::max(1.0, x_star.norm());
  rep.error_nonzero = rep.exact_error.norm() > tol * scale;

  const bool intersect_free = rep.null_intersection_component.norm() <= tol * scale;
  const bool in_range = rep.kernel_null_component.norm() <= tol * scale;
  if (!rep.kernel_singular) {
    rep.label = RecoveryCase::case1;
    rep.predicted_error = rep.exact_error;
  } else if (intersect_free && in_range) {
    rep.label = RecoveryCase::case3;
    rep.predicted_error = Eigen::VectorXd::Zero(n);
  } else if (intersect_free) {
    rep.label = RecoveryCase::case2;
    const Eigen::VectorXd& xn = rep.kernel_null_component;
    rep.predicted_error = -xn + ks * pseudo_inverse(a * ks, 1e-12) * (a * xn);
  } else {
    rep.label = RecoveryCase::unclassified;
    rep.predicted_error = rep.exact_error;
  }
  return rep;
}

std::vector<double> mse_curve(const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& x_star,
                              double sigma, double eta, std::size_t steps) {
  const auto n = static_cast<Eigen::Index>(model.size());
  require(op.cols() == model.size(), ErrorKind::shape, "operator and kernel sizes differ");
  require(x_star.size() == n, ErrorKind::shape, "signal size mismatch");
  require(sigma >= 0.0, ErrorKind::invalid_argument, "sigma must be non-negative");
  require(op.full_row_rank(), ErrorKind::invalid_argument, "forward operator must have full row rank");
  const Eigen::MatrixXd& a = op.matrix();
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n) - eta * (model.kernel * a.transpose() * a);
  const Eigen::MatrixXd a_pinv = pseudo_inverse(a);

  // bias_t = M^t x; noise_t = (I - M^t) A^+ = A^+ - M^t A^+.
  Eigen::VectorXd bias = x_star;
  Eigen::MatrixXd powered = a_pinv;
  std::vector<double> out;
  out.reserve(steps + 1);
  for (std::size_t t = 0;; ++t) {
    const double noise = (a_pinv - powered).squaredNorm();
    out.push_back(bias.squaredNorm() + sigma * sigma * noise);
    if (t == steps) break;
    bias = step * bias;
    powered = step * powered;
  }
  return out;
}

}  // namespace diplab
