// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"

#include "diplab/error.hpp"
#include "diplab/operators.hpp"
#include "support/check.hpp"

using namespace diplab;
using testing::random_tensor;

namespace {

double adjoint_gap(const LinearOperator& a, std::uint64_t seed) {
  Tensor x = random_tensor({a.cols()}, seed);
  Tensor w = random_tensor({a.rows()}, seed + 1);
  const double lhs = a.apply(x).flat().dot(w.flat());
  const double rhs = x.flat().dot(a.adjoint(w).flat());
  return std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
}

}  // namespace

TEST_CASE("adjoint consistency for every operator kind") {
  CHECK(adjoint_gap(LinearOperator::identity(17), 1) < 1e-10);
  CHECK(adjoint_gap(LinearOperator::mask(20, {0, 3, 7, 19}), 2) < 1e-10);
  CHECK(adjoint_gap(LinearOperator::gaussian_cs(12, 40, 3), 3) < 1e-10);
  CHECK(adjoint_gap(LinearOperator::subsampled_dft(32, {0, 1, 5, 16}), 4) < 1e-10);
}

TEST_CASE("identity and mask act as expected") {
  Tensor x(Shape{1, 5}, {1, 2, 3, 4, 5});
  CHECK(LinearOperator::identity(5).apply(x) == Tensor(Shape{5}, {1, 2, 3, 4, 5}));
  auto m = LinearOperator::box_mask(5, 1, 2);
  CHECK(m.apply(x) == Tensor(Shape{3}, {1, 4, 5}));
  CHECK(m.adjoint(m.apply(x), {1, 5}) == Tensor(Shape{1, 5}, {1, 0, 0, 4, 5}));
  CHECK_THROWS_AS(LinearOperator::mask(5, {1, 1}), Error);
  CHECK_THROWS_AS(LinearOperator::mask(5, {6}), Error);
  CHECK_THROWS_AS(m.apply(Tensor(Shape{4})), Error);
}

TEST_CASE("subsampled DFT rows reproduce the complex DFT sum") {
  const std::size_t n = 24;
  auto a = LinearOperator::subsampled_dft(n, {0, 3, 12});
  REQUIRE(a.rows() == 4);  // k=0 and k=n/2 are single real rows
  Tensor x = random_tensor({n}, 9);
  Tensor y = a.apply(x);
  auto dft = [&](std::size_t k) {
    std::complex<double> s = 0;
    for (std::size_t j = 0; j < n; ++j)
      s += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * j) / double(n));
    return s / std::sqrt(double(n));
  };
  CHECK(std::abs(y[0] - dft(0).real()) < 1e-12);
  CHECK(std::abs(y[1] - std::sqrt(2.0) * dft(3).real()) < 1e-12);
  CHECK(std::abs(y[2] - std::sqrt(2.0) * dft(3).imag()) < 1e-12);
  CHECK(std::abs(y[3] - dft(12).real()) < 1e-12);
  // Stacked rows are orthonormal.
  Eigen::MatrixXd gram = a.matrix() * a.matrix().transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-12);
  CHECK_THROWS_AS(LinearOperator::subsampled_dft(n, {13}), Error);
}

TEST_CASE("gaussian operator has N(0, 1/m) entries") {
  auto a = LinearOperator::gaussian_cs(50, 400, 11);
  const auto& m = a.matrix();
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var * 50 - 1.0) < 0.05);
  CHECK(a.full_row_rank());
  CHECK(LinearOperator::gaussian_cs(50, 400, 11).matrix() == m);
}

TEST_CASE("null-space projector is an orthogonal projector onto N(A)") {
  auto a = LinearOperator::gaussian_cs(6, 15, 12);
  Eigen::MatrixXd p = null_space_projector(a);
  CHECK((p * p - p).norm() < 1e-12);
  CHECK((p - p.transpose()).norm() < 1e-12);
  CHECK((a.matrix() * p).norm() < 1e-12);
  CHECK(std::abs(p.trace() - 9.0) < 1e-10);
}

TEST_CASE("noise models") {
  Tensor y = Tensor::filled({200}, 0.5);
  NoiseModel g{NoiseKind::gaussian, 0.1, 0.0, 1.0, 5};
  Tensor yg = corrupt(y, g);
  CHECK(yg == corrupt(y, g));
  const double sd = std::sqrt((yg - y).squared_norm() / 200);
  CHECK(sd == doctest::Approx(0.1).epsilon(0.15));

  NoiseModel imp{NoiseKind::sparse_impulse, 0.0, 0.1, 2.0, 6};
  Corruption c = corrupt_with_support(y, imp);
  CHECK(c.impulse_support.size() == 20);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 200; ++i)
    if (c.y[i] != y[i]) {
      ++changed;
      CHECK(std::abs(std::abs(c.y[i] - y[i]) - 2.0) < 1e-15);
    }
  CHECK(changed == 20);
  NoiseModel bad{NoiseKind::gaussian, -1.0};
  CHECK_THROWS_AS(corrupt(y, bad), Error);
}
