// SPDX-License-Identifier: Apache-2.0
#include "diplab/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "diplab/error.hpp"
#include "diplab/simplex.hpp"

namespace diplab {

namespace {

using Index = Eigen::Index;

Eigen::MatrixXd gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = d(rng);
  return m;
}

Eigen::MatrixXd orthonormal_columns(Index n, Index r, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(n, r, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
}

}  // namespace

Eigen::VectorXd MeasurementSet::apply(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(static_cast<Index>(mats.size()));
  for (std::size_t i = 0; i < mats.size(); ++i) out(static_cast<Index>(i)) = mats[i].cwiseProduct(x).sum();
  return out;
}

Eigen::MatrixXd MeasurementSet::adjoint(const Eigen::VectorXd& r) const {
  require(r.size() == static_cast<Index>(mats.size()), ErrorKind::shape, "residual size mismatch");
  const auto n = static_cast<Index>(dim());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < mats.size(); ++i) out += r(static_cast<Index>(i)) * mats[i];
  return out;
}

double MeasurementSet::commutator_norm() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < mats.size(); ++i)
    for (std::size_t j = i + 1; j < mats.size(); ++j)
      worst = std::max(worst, (mats[i] * mats[j] - mats[j] * mats[i]).norm());
  return worst;
}

void MeasurementSet::validate() const {
  require(!mats.empty(), ErrorKind::invalid_argument, "measurement set is empty");
  const Index n = mats[0].rows();
  require(n > 0, ErrorKind::invalid_argument, "measurement matrices must be non-empty");
  for (const auto& a : mats) {
    require(a.rows() == n && a.cols() == n, ErrorKind::shape, "measurement matrices must all be n x n");
    require(a.allFinite(), ErrorKind::invalid_argument, "measurement matrices must be finite");
    require((a - a.transpose()).norm() <= 1e-12 * std::max(1.0, a.norm()), ErrorKind::invalid_argument,
            "measurement matrices must be symmetric");
  }
}

CommutingMeasurementSet CommutingMeasurementSet::from_matrices(std::vector<Eigen::MatrixXd> mats, double tol) {
  CommutingMeasurementSet out;
  out.set_.mats = std::move(mats);
  out.set_.validate();
  double scale = 1.0;
  for (const auto& a : out.set_.mats) scale = std::max(scale, a.norm());
  require(out.set_.commutator_norm() <= tol * scale * scale, ErrorKind::invalid_argument,
          "measurement matrices do not commute");

  // A generic combination has the common eigenvectors as its own.
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> coef(0.5, 1.5);
  const auto n = static_cast<Index>(out.set_.dim());
  Eigen::MatrixXd combo = Eigen::MatrixXd::Zero(n, n);
  for (const auto& a : out.set_.mats) combo += coef(rng) * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(combo);
  out.basis_ = es.eigenvectors();
  const auto m = static_cast<Index>(out.set_.size());
  out.spectra_.resize(m, n);
  for (Index i = 0; i < m; ++i) {
    const Eigen::MatrixXd d = out.basis_.transpose() * out.set_.mats[static_cast<std::size_t>(i)] * out.basis_;
    out.spectra_.row(i) = d.diagonal().transpose();
    const double off = (d - Eigen::MatrixXd(d.diagonal().asDiagonal())).norm();
    require(off <= 1e-8 * scale, ErrorKind::invalid_argument, "could not find a common eigenbasis");
  }
  return out;
}

CommutingMeasurementSet CommutingMeasurementSet::from_spectra(Eigen::MatrixXd basis, Eigen::MatrixXd spectra) {
  const Index n = basis.rows();
  require(n > 0 && basis.cols() == n, ErrorKind::shape, "basis must be square");
  require(spectra.rows() > 0 && spectra.cols() == n, ErrorKind::shape, "spectra must be m x n");
  require((basis.transpose() * basis - Eigen::MatrixXd::Identity(n, n)).norm() < 1e-10, ErrorKind::invalid_argument,
          "basis must be orthonormal");
  CommutingMeasurementSet out;
  out.basis_ = std::move(basis);
  out.spectra_ = std::move(spectra);
  for (Index i = 0; i < out.spectra_.rows(); ++i)
    out.set_.mats.push_back(out.basis_ * out.spectra_.row(i).transpose().asDiagonal() * out.basis_.transpose());
  // Symmetrize away rounding from the products.
  for (auto& a : out.set_.mats) a = 0.5 * (a + a.transpose()).eval();
  return out;
}

CommutingMeasurementSet CommutingMeasurementSet::diagonal(Eigen::MatrixXd spectra) {
  const Index n = spectra.cols();
  return from_spectra(Eigen::MatrixXd::Identity(n, n), std::move(spectra));
}

CommutingMeasurementSet CommutingMeasurementSet::random(std::size_t n, std::size_t m, std::uint64_t seed) {
  require(n > 0 && m > 0, ErrorKind::invalid_argument, "measurement set dimensions must be positive");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd v = orthonormal_columns(static_cast<Index>(n), static_cast<Index>(n), rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd d(static_cast<Index>(m), static_cast<Index>(n));
  for (Index j = 0; j < d.cols(); ++j)
    for (Index i = 0; i < d.rows(); ++i) d(i, j) = u(rng);
  return from_spectra(std::move(v), std::move(d));
}

Eigen::MatrixXd CommutingMeasurementSet::compose(const Eigen::VectorXd& lambda) const {
  require(lambda.size() == basis_.cols(), ErrorKind::shape, "eigenvalue vector size mismatch");
  return basis_ * lambda.asDiagonal() * basis_.transpose();
}

PlantedInstance planted_instance(std::size_t n, std::size_t m, std::size_t rank, std::uint64_t seed) {
  require(rank >= 1 && rank <= m && m <= n, ErrorKind::invalid_argument,
          "planted instance needs 1 <= rank <= m <= n");
  std::mt19937_64 rng(seed);
  const auto nn = static_cast<Index>(n), mm = static_cast<Index>(m);
  Eigen::MatrixXd v = orthonormal_columns(nn, nn, rng);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Eigen::MatrixXd d(mm, nn);
  for (Index j = 0; j < nn; ++j)
    for (Index i = 0; i < mm; ++i) d(i, j) = u(rng);
  Eigen::VectorXd nu(mm);
  for (Index i = 0; i < mm; ++i) nu(i) = u(rng);

  std::vector<Index> order(n);
  for (Index k = 0; k < nn; ++k) order[static_cast<std::size_t>(k)] = k;
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(nn);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  for (std::size_t k = 0; k < n; ++k) {
    const Index col = order[k];
    // Columns on the support get D^T nu = 1, the rest 1/2.
    const double target = k < rank ? 1.0 : 0.5;
    d.col(col) *= target / d.col(col).dot(nu);
    if (k < rank) lambda(col) = mag(rng);
  }
  PlantedInstance out{CommutingMeasurementSet::from_spectra(std::move(v), std::move(d)), {}, {}};
  out.x_true = out.meas.compose(lambda);
  out.y = out.meas.spectra() * lambda;
  return out;
}

Eigen::MatrixXd scaled_init(std::size_t n, std::size_t r, double alpha, std::uint64_t seed) {
  require(alpha > 0.0, ErrorKind::invalid_argument, "init scale alpha must be positive");
  require(r >= 1 && r <= n, ErrorKind::invalid_argument, "factor rank must be in [1, n]");
  std::mt19937_64 rng(seed);
  return alpha * orthonormal_columns(static_cast<Index>(n), static_cast<Index>(r), rng);
}

Eigen::MatrixXd FlowState::x() const { return w.size() ? Eigen::MatrixXd(u * w.transpose()) : Eigen::MatrixXd(u * u.transpose()); }

namespace {

struct FlowDeriv {
  Eigen::MatrixXd du, dw;
  Eigen::VectorXd ds;
};

struct Flow {
  const MeasurementSet& meas;
  const Eigen::VectorXd& y;
  bool asym;

  Eigen::VectorXd residual(const Eigen::MatrixXd& u, const Eigen::MatrixXd& w) const {
    return meas.apply(asym ? Eigen::MatrixXd(u * w.transpose()) : Eigen::MatrixXd(u * u.transpose())) - y;
  }

  FlowDeriv deriv(const Eigen::MatrixXd& u, const Eigen::MatrixXd& w) const {
    const Eigen::VectorXd r = residual(u, w);
    const Eigen::MatrixXd g = meas.adjoint(r);
    FlowDeriv d;
    if (asym) {
      d.du = -g * w;
      d.dw = -g * u;
    } else {
      d.du = -g * u;
    }
    d.ds = -r;
    return d;
  }
};

}  // namespace

FlowResult gradient_flow(const MeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& u0,
                         const FlowOptions& opts) {
  meas.validate();
  require(y.size() == static_cast<Index>(meas.size()), ErrorKind::shape, "measurement vector size mismatch");
  require(u0.rows() == static_cast<Index>(meas.dim()) && u0.cols() >= 1, ErrorKind::shape, "U0 must be n x r");
  require(opts.dt > 0.0 && opts.horizon >= 0.0 && opts.min_dt > 0.0, ErrorKind::invalid_argument,
          "flow needs dt > 0, horizon >= 0, min_dt > 0");
  require(opts.record_every >= 1, ErrorKind::invalid_argument, "record_every must be at least 1");

  const Flow flow{meas, y, opts.asymmetric};
  FlowState st;
  st.u = u0;
  if (opts.asymmetric) st.w = u0;
  st.s = Eigen::VectorXd::Zero(y.size());
  Eigen::VectorXd r = flow.residual(st.u, st.w);
  st.loss = 0.5 * r.squaredNorm();

  FlowResult out;
  out.trajectory.push_back(st);
  double dt = opts.dt;
  std::size_t since_record = 0;
  const auto axpy = [](const Eigen::MatrixXd& a, double h, const Eigen::MatrixXd& b) -> Eigen::MatrixXd {
    return b.size() ? Eigen::MatrixXd(a + h * b) : a;
  };
  while (r.norm() >= opts.residual_tol && st.t < opts.horizon) {
    const double h = std::min(dt, opts.horizon - st.t);
    const FlowDeriv k1 = flow.deriv(st.u, st.w);
    const FlowDeriv k2 = flow.deriv(st.u + 0.5 * h * k1.du, axpy(st.w, 0.5 * h, k1.dw));
    const FlowDeriv k3 = flow.deriv(st.u + 0.5 * h * k2.du, axpy(st.w, 0.5 * h, k2.dw));
    const FlowDeriv k4 = flow.deriv(st.u + h * k3.du, axpy(st.w, h, k3.dw));
    FlowState next;
    next.u = st.u + (h / 6.0) * (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du);
    if (opts.asymmetric) next.w = st.w + (h / 6.0) * (k1.dw + 2.0 * k2.dw + 2.0 * k3.dw + k4.dw);
    next.s = st.s + (h / 6.0) * (k1.ds + 2.0 * k2.ds + 2.0 * k3.ds + k4.ds);
    next.t = st.t + h;
    const Eigen::VectorXd rn = flow.residual(next.u, next.w);
    next.loss = 0.5 * rn.squaredNorm();
    if (!std::isfinite(next.loss) || next.loss > st.loss * (1.0 + 1e-10) + 1e-30) {
      dt *= 0.5;
      ++out.halvings;
      require(dt >= opts.min_dt, ErrorKind::divergence, "gradient flow step size underflow");
      continue;
    }
    st = std::move(next);
    r = rn;
    ++out.steps;
    dt = std::min(opts.dt, 2.0 * dt);
    if (++since_record == opts.record_every) {
      out.trajectory.push_back(st);
      since_record = 0;
    }
  }
  if (since_record != 0) out.trajectory.push_back(st);
  out.converged = r.norm() < opts.residual_tol;
  out.final_state = std::move(st);
  return out;
}

Eigen::MatrixXd symmetric_expm(const Eigen::MatrixXd& m) {
  require(m.rows() == m.cols(), ErrorKind::shape, "matrix exponential needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  return es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd closed_form_iterate(const MeasurementSet& meas, const Eigen::MatrixXd& x0, const Eigen::VectorXd& s) {
  const Eigen::MatrixXd e = symmetric_expm(meas.adjoint(s));
  return e * x0 * e;
}

NuclearSolution nuclear_oracle(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y) {
  require(y.size() == static_cast<Index>(meas.size()), ErrorKind::shape, "measurement vector size mismatch");
  const Index n = static_cast<Index>(meas.dim());
  LpResult lp = solve_lp(meas.spectra(), y, Eigen::VectorXd::Ones(n));
  require(lp.status == LpStatus::optimal, ErrorKind::infeasible, "no PSD matrix satisfies A(X) = y");
  NuclearSolution out;
  out.lambda = lp.x;
  out.x = meas.compose(lp.x);
  out.objective = lp.x.sum();
  return out;
}

NuclearSolution nuclear_oracle(const MeasurementSet& meas, const Eigen::VectorXd& y) {
  meas.validate();
  double scale = 1.0;
  for (const auto& a : meas.mats) scale = std::max(scale, a.norm());
  require(meas.commutator_norm() <= 1e-10 * scale * scale, ErrorKind::invalid_argument,
          "nuclear oracle needs commuting measurements");
  return nuclear_oracle(CommutingMeasurementSet::from_matrices(meas.mats), y);
}

KktCertificate kkt_check(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                         double tol) {
  const Index n = static_cast<Index>(meas.dim());
  const Index m = static_cast<Index>(meas.size());
  require(x.rows() == n && x.cols() == n, ErrorKind::shape, "X must be n x n");
  require(y.size() == m, ErrorKind::shape, "measurement vector size mismatch");
  require(tol > 0.0, ErrorKind::invalid_argument, "KKT tolerance must be positive");
  const Eigen::MatrixXd xs = 0.5 * (x + x.transpose());

  KktCertificate c;
  c.primal_residual = (meas.apply(xs) - y).norm() / std::max(1.0, y.norm());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xs);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  c.psd_violation = std::max(0.0, -ev.minCoeff()) / std::max(1.0, top);

  // Least-squares multiplier on the range of X.
  std::vector<Index> range;
  for (Index k = 0; k < n; ++k)
    if (ev(k) > tol * top) range.push_back(k);
  const Index q = static_cast<Index>(range.size());
  c.nu = Eigen::VectorXd::Zero(m);
  if (q > 0) {
    Eigen::MatrixXd qm(n, q);
    for (Index j = 0; j < q; ++j) qm.col(j) = es.eigenvectors().col(range[static_cast<std::size_t>(j)]);
    Eigen::MatrixXd sys(n * q, m);
    for (Index i = 0; i < m; ++i) {
      const Eigen::MatrixXd aq = meas.measurements().mats[static_cast<std::size_t>(i)] * qm;
      sys.col(i) = Eigen::Map<const Eigen::VectorXd>(aq.data(), n * q);
    }
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(qm.data(), n * q);
    c.nu = sys.completeOrthogonalDecomposition().solve(rhs);
  }
  auto dual_top = [&](const Eigen::VectorXd& nu) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> d(meas.adjoint(nu), Eigen::EigenvaluesOnly);
    return d.eigenvalues().maxCoeff();
  };
  auto slack = [&](const Eigen::VectorXd& nu) {
    const Eigen::MatrixXd res = (Eigen::MatrixXd::Identity(n, n) - meas.adjoint(nu)) * xs;
    return res.norm() / std::max(1.0, xs.norm());
  };

  if (q > 0 && dual_top(c.nu) > 1.0 + tol) {
    // Feasibility LP in the common basis: (D^T nu)_k = 1 where X has weight,
    // (D^T nu)_k <= 1 elsewhere, nu = p - q free.
    const Eigen::MatrixXd xv = meas.basis().transpose() * xs * meas.basis();
    const double xn = std::max(xv.norm(), 1e-300);
    const Eigen::MatrixXd& d = meas.spectra();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, 2 * m + n);
    std::vector<bool> active(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
      active[static_cast<std::size_t>(k)] = xv.row(k).norm() > tol * xn;
      a.block(k, 0, 1, m) = d.col(k).transpose();
      a.block(k, m, 1, m) = -d.col(k).transpose();
      if (!active[static_cast<std::size_t>(k)]) a(k, 2 * m + k) = 1.0;
    }
    LpResult lp = solve_lp(a, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(2 * m + n));
    if (lp.status == LpStatus::optimal) {
      const Eigen::VectorXd nu = lp.x.head(m) - lp.x.segment(m, m);
      if (dual_top(nu) < dual_top(c.nu)) c.nu = nu;
    }
  }
  c.dual_violation = std::max(0.0, dual_top(c.nu) - 1.0);
  c.slackness = slack(c.nu);

  if (c.primal_residual > tol) {
    c.reason = "primal-infeasible";
  } else if (c.psd_violation > tol) {
    c.reason = "not-psd";
  } else if (c.dual_violation > tol) {
    c.reason = "dual-infeasible";
  } else if (c.slackness > tol) {
    c.reason = "slackness";
  } else {
    c.reason = "ok";
    c.pass = true;
  }
  return c;
}

DopSolution dop_convex_solve(const CommutingMeasurementSet& meas, const Eigen::VectorXd& y, double alpha) {
  require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::invalid_argument, "alpha must be positive and finite");
  const Index n = static_cast<Index>(meas.dim());
  const Index m = static_cast<Index>(meas.size());
  require(y.size() == m, ErrorKind::shape, "measurement vector size mismatch");
  const double pen = 1.0 / alpha;
  Eigen::MatrixXd a(m, n + 2 * m);
  a << meas.spectra(), Eigen::MatrixXd::Identity(m, m), -Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd c(n + 2 * m);
  c << Eigen::VectorXd::Ones(n), Eigen::VectorXd::Constant(2 * m, pen);
  LpResult lp = solve_lp(a, y, c);
  require(lp.status == LpStatus::optimal, ErrorKind::infeasible, "robust nuclear-norm program has no solution");
  DopSolution out;
  out.lambda = lp.x.head(n);
  out.s = lp.x.segment(n, m) - lp.x.segment(n + m, m);
  out.x = meas.compose(out.lambda);
  out.objective = lp.objective;
  return out;
}

DopFactoredResult dop_factored(const MeasurementSet& meas, const Eigen::VectorXd& y, const DopFactoredOptions& opts) {
  meas.validate();
  const std::size_t n = meas.dim();
  require(y.size() == static_cast<Index>(meas.size()), ErrorKind::shape, "measurement vector size mismatch");
  require(opts.alpha > 0.0 && opts.lr > 0.0 && opts.init > 0.0, ErrorKind::invalid_argument,
          "factored run needs alpha, lr, init > 0");
  const std::size_t r = opts.rank == 0 ? n : opts.rank;
  DopFactoredResult out;
  out.u = scaled_init(n, r, opts.init, opts.seed);
  out.g = Eigen::VectorXd::Constant(y.size(), opts.init);
  out.h = Eigen::VectorXd::Constant(y.size(), opts.init);
  const double lr_noise = opts.alpha * opts.lr;
  for (std::size_t t = 0; t < opts.steps; ++t) {
    const Eigen::VectorXd res = meas.apply(out.u * out.u.transpose()) + out.g.cwiseAbs2() - out.h.cwiseAbs2() - y;
    const Eigen::MatrixXd gu = 2.0 * meas.adjoint(res) * out.u;
    const Eigen::VectorXd gg = 2.0 * res.cwiseProduct(out.g);
    const Eigen::VectorXd gh = -2.0 * res.cwiseProduct(out.h);
    out.u -= opts.lr * gu;
    out.g -= lr_noise * gg;
    out.h -= lr_noise * gh;
    require(out.u.allFinite() && out.g.allFinite() && out.h.allFinite(), ErrorKind::divergence,
            "factored iterates became non-finite");
  }
  out.x = out.u * out.u.transpose();
  out.s = out.g.cwiseAbs2() - out.h.cwiseAbs2();
  out.loss = 0.5 * (meas.apply(out.x) + out.s - y).squaredNorm();
  return out;
}

std::size_t numerical_rank(const Eigen::MatrixXd& x, double rel) {
  require(x.rows() == x.cols(), ErrorKind::shape, "numerical rank needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (x + x.transpose()), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
  const double top = ev.size() ? ev.maxCoeff() : 0.0;
  if (top <= 0.0) return 0;
  return static_cast<std::size_t>((ev.array() > rel * top).count());
}

}  // namespace diplab
