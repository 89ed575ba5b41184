// SPDX-License-Identifier: Apache-2.0
#include "diplab/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "diplab/error.hpp"

namespace diplab {

std::string to_string(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
  }
  return "unknown";
}

namespace {

using Index = Eigen::Index;

// Tableau rows 0..m-1 are constraints, row m is the reduced-cost row; the
// last column is the right-hand side.
class Tableau {
 public:
  Tableau(Eigen::MatrixXd t, std::vector<Index> basis, double tol, std::size_t max_pivots)
      : t_(std::move(t)), basis_(std::move(basis)), tol_(tol), max_pivots_(max_pivots) {}

  Index rows() const { return t_.rows() - 1; }
  Index cols() const { return t_.cols() - 1; }
  Eigen::MatrixXd& data() { return t_; }
  std::vector<Index>& basis() { return basis_; }
  std::size_t pivots() const { return pivots_; }

  void pivot(Index r, Index c) {
    require(pivots_ < max_pivots_, ErrorKind::budget, "simplex pivot limit reached");
    ++pivots_;
    t_.row(r) /= t_(r, c);
    for (Index i = 0; i < t_.rows(); ++i)
      if (i != r && t_(i, c) != 0.0) t_.row(i) -= t_(i, c) * t_.row(r);
    basis_[static_cast<std::size_t>(r)] = c;
  }

  // Runs to optimality over columns [0, allowed). Returns false if unbounded.
  bool optimize(Index allowed) {
    const Index m = rows();
    for (;;) {
      Index enter = -1;
      for (Index j = 0; j < allowed; ++j)
        if (t_(m, j) < -tol_) {
          enter = j;
          break;
        }
      if (enter < 0) return true;
      Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < m; ++i) {
        if (t_(i, enter) <= tol_) continue;
        const double ratio = t_(i, cols()) / t_(i, enter);
        if (ratio < best - tol_ ||
            (std::abs(ratio - best) <= tol_ && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          best = std::min(best, ratio);
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
  }

 private:
  Eigen::MatrixXd t_;
  std::vector<Index> basis_;
  double tol_;
  std::size_t max_pivots_;
  std::size_t pivots_ = 0;
};

}  // namespace

LpResult solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& opts) {
  const Index m = a.rows(), n = a.cols();
  require(b.size() == m, ErrorKind::invalid_argument, "LP right-hand side size mismatch");
  require(c.size() == n, ErrorKind::invalid_argument, "LP cost size mismatch");
  require(n > 0, ErrorKind::invalid_argument, "LP needs at least one variable");
  require(a.allFinite() && b.allFinite() && c.allFinite(), ErrorKind::invalid_argument, "LP data must be finite");

  const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.size() ? b.cwiseAbs().maxCoeff() : 0.0});
  const double tol = opts.tol * scale;

  // Phase 1: artificial columns n..n+m-1 with unit cost.
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  for (Index i = 0; i < m; ++i) {
    const double sign = b(i) < 0 ? -1.0 : 1.0;
    t.row(i).head(n) = sign * a.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m) = sign * b(i);
  }
  for (Index i = 0; i < m; ++i) t.row(m) -= t.row(i);
  for (Index i = 0; i < m; ++i) t(m, n + i) = 0.0;
  std::vector<Index> basis(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

  Tableau tab(std::move(t), std::move(basis), tol, opts.max_pivots);
  tab.optimize(n + m);
  LpResult out;
  if (-tab.data()(m, n + m) > tol * std::max<Index>(1, m)) {
    out.status = LpStatus::infeasible;
    out.pivots = tab.pivots();
    return out;
  }

  // Drive remaining artificials out of the basis; rows where that is
  // impossible are redundant and are dropped.
  std::vector<Index> keep;
  for (Index i = 0; i < m; ++i) {
    if (tab.basis()[static_cast<std::size_t>(i)] < n) {
      keep.push_back(i);
      continue;
    }
    Index col = -1;
    for (Index j = 0; j < n; ++j)
      if (std::abs(tab.data()(i, j)) > tol) {
        col = j;
        break;
      }
    if (col >= 0) {
      tab.pivot(i, col);
      keep.push_back(i);
    }
  }

  // Phase 2 on the kept rows and original columns.
  const Index mk = static_cast<Index>(keep.size());
  Eigen::MatrixXd t2 = Eigen::MatrixXd::Zero(mk + 1, n + 1);
  std::vector<Index> basis2(static_cast<std::size_t>(mk));
  for (Index k = 0; k < mk; ++k) {
    const Index i = keep[static_cast<std::size_t>(k)];
    t2.row(k).head(n) = tab.data().row(i).head(n);
    t2(k, n) = tab.data()(i, n + m);
    basis2[static_cast<std::size_t>(k)] = tab.basis()[static_cast<std::size_t>(i)];
  }
  t2.row(mk).head(n) = c.transpose();
  for (Index k = 0; k < mk; ++k) {
    const Index j = basis2[static_cast<std::size_t>(k)];
    t2.row(mk) -= c(j) * t2.row(k);
  }
  const std::size_t used = tab.pivots();
  Tableau tab2(std::move(t2), std::move(basis2), tol, opts.max_pivots - std::min(used, opts.max_pivots));
  const bool bounded = tab2.optimize(n);
  out.pivots = used + tab2.pivots();
  if (!bounded) {
    out.status = LpStatus::unbounded;
    return out;
  }
  out.status = LpStatus::optimal;
  out.x = Eigen::VectorXd::Zero(n);
  for (Index k = 0; k < mk; ++k) out.x(tab2.basis()[static_cast<std::size_t>(k)]) = std::max(0.0, tab2.data()(k, n));
  out.objective = c.dot(out.x);
  return out;
}

}  // namespace diplab
