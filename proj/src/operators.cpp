// SPDX-License-Identifier: Apache-2.0
#include "diplab/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "diplab/error.hpp"

namespace diplab {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::identity: return "identity";
    case OperatorKind::mask_inpainting: return "mask-inpainting";
    case OperatorKind::gaussian_cs: return "gaussian-cs";
    case OperatorKind::subsampled_dft: return "subsampled-dft";
  }
  return "unknown";
}

OperatorKind operator_kind_from_string(const std::string& s) {
  if (s == "identity") return OperatorKind::identity;
  if (s == "mask-inpainting" || s == "mask") return OperatorKind::mask_inpainting;
  if (s == "gaussian-cs") return OperatorKind::gaussian_cs;
  if (s == "subsampled-dft") return OperatorKind::subsampled_dft;
  throw Error(ErrorKind::config, "unknown operator kind '" + s + "'");
}

LinearOperator::LinearOperator(OperatorKind kind, Eigen::MatrixXd matrix) : kind_(kind), matrix_(std::move(matrix)) {
  require(matrix_.rows() > 0 && matrix_.cols() > 0, ErrorKind::shape, "operator must be non-empty");
  require(matrix_.allFinite(), ErrorKind::invalid_argument, "operator entries must be finite");
}

LinearOperator LinearOperator::identity(std::size_t n) {
  const auto k = static_cast<Eigen::Index>(n);
  return {OperatorKind::identity, Eigen::MatrixXd::Identity(k, k)};
}

LinearOperator LinearOperator::mask(std::size_t n, const std::vector<std::size_t>& keep) {
  require(!keep.empty(), ErrorKind::invalid_argument, "mask must keep at least one coordinate");
  std::set<std::size_t> seen;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    require(keep[r] < n, ErrorKind::invalid_argument, "mask index out of range");
    require(seen.insert(keep[r]).second, ErrorKind::invalid_argument, "mask indices must be distinct");
    m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(keep[r])) = 1.0;
  }
  return {OperatorKind::mask_inpainting, std::move(m)};
}

LinearOperator LinearOperator::box_mask(std::size_t n, std::size_t start, std::size_t length) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (i < start || i >= start + length) keep.push_back(i);
  return mask(n, keep);
}

LinearOperator LinearOperator::gaussian_cs(std::size_t m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  Eigen::MatrixXd a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = dist(rng);
  return {OperatorKind::gaussian_cs, std::move(a)};
}

LinearOperator LinearOperator::subsampled_dft(std::size_t n, const std::vector<std::size_t>& frequencies) {
  require(!frequencies.empty(), ErrorKind::invalid_argument, "need at least one frequency");
  std::set<std::size_t> seen;
  std::vector<Eigen::RowVectorXd> rows;
  const double inv = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t k : frequencies) {
    require(2 * k <= n, ErrorKind::invalid_argument, "frequency must lie in [0, n/2]");
    require(seen.insert(k).second, ErrorKind::invalid_argument, "frequencies must be distinct");
    const bool self_conjugate = k == 0 || 2 * k == n;
    const double s = self_conjugate ? inv : std::sqrt(2.0) * inv;
    Eigen::RowVectorXd re(static_cast<Eigen::Index>(n)), im(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * j % n) / static_cast<double>(n);
      re(static_cast<Eigen::Index>(j)) = s * std::cos(ang);
      im(static_cast<Eigen::Index>(j)) = -s * std::sin(ang);
    }
    rows.push_back(re);
    if (!self_conjugate) rows.push_back(im);
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < rows.size(); ++r) a.row(static_cast<Eigen::Index>(r)) = rows[r];
  return {OperatorKind::subsampled_dft, std::move(a)};
}

Tensor LinearOperator::apply(const Tensor& x) const {
  require(x.size() == cols(), ErrorKind::shape,
          "operator expects " + std::to_string(cols()) + " inputs, got " + std::to_string(x.size()));
  Eigen::VectorXd y = matrix_ * x.flat();
  return Tensor::from_eigen(y);
}

Tensor LinearOperator::adjoint(const Tensor& w, const Shape& signal_shape) const {
  require(w.size() == rows(), ErrorKind::shape,
          "adjoint expects " + std::to_string(rows()) + " inputs, got " + std::to_string(w.size()));
  Eigen::VectorXd x = matrix_.transpose() * w.flat();
  return Tensor::from_eigen(x, signal_shape.empty() ? Shape{cols()} : signal_shape);
}

std::size_t LinearOperator::rank(double rel_tol) const {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix_);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

Eigen::MatrixXd null_space_projector(const LinearOperator& op, double rel_tol) {
  const auto& a = op.matrix();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  const Eigen::Index n = a.cols();
  const Eigen::MatrixXd null_basis = svd.matrixV().rightCols(n - r);
  return null_basis * null_basis.transpose();
}

void NoiseModel::validate() const {
  require(sigma >= 0.0, ErrorKind::invalid_argument, "noise sigma must be non-negative");
  require(sparsity >= 0.0 && sparsity <= 1.0, ErrorKind::invalid_argument, "noise sparsity must lie in [0, 1]");
  require(amplitude >= 0.0, ErrorKind::invalid_argument, "impulse amplitude must be non-negative");
}

Corruption corrupt_with_support(const Tensor& y, const NoiseModel& noise) {
  noise.validate();
  Corruption out{y, {}};
  std::mt19937_64 rng(noise.seed);
  if (noise.kind == NoiseKind::gaussian) {
    if (noise.sigma == 0.0) return out;
    std::normal_distribution<double> dist(0.0, noise.sigma);
    for (double& v : out.y.data()) v += dist(rng);
    return out;
  }
  const std::size_t m = y.size();
  const auto hits = static_cast<std::size_t>(std::llround(noise.sparsity * static_cast<double>(m)));
  if (hits == 0) return out;
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(hits);
  std::sort(idx.begin(), idx.end());
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i : idx) out.y[i] += sign(rng) ? noise.amplitude : -noise.amplitude;
  out.impulse_support = std::move(idx);
  return out;
}

Tensor corrupt(const Tensor& y, const NoiseModel& noise) { return corrupt_with_support(y, noise).y; }

}  // namespace diplab
