// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"

#include "diplab/error.hpp"
#include "diplab/tensor.hpp"
#include "support/check.hpp"

using namespace diplab;

TEST_CASE("shape validation and element count") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), Error);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(Tensor(Shape{2}, {1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
  Tensor t(Shape{2, 3});
  CHECK(t.size() == 6);
  CHECK(t.squared_norm() == 0.0);
}

TEST_CASE("arithmetic and reshape") {
  Tensor a(Shape{3}, {1, 2, 3});
  Tensor b(Shape{3}, {4, 5, 6});
  CHECK((a + b) == Tensor(Shape{3}, {5, 7, 9}));
  CHECK((b - a) == Tensor(Shape{3}, {3, 3, 3}));
  CHECK((2.0 * a) == Tensor(Shape{3}, {2, 4, 6}));
  CHECK(a.reshaped({3, 1}).shape() == Shape{3, 1});
  CHECK_THROWS_AS(a.reshaped({2, 2}), Error);
  CHECK_THROWS_AS(a + Tensor(Shape{3, 1}), Error);
}

TEST_CASE("csv round trip keeps every bit") {
  Tensor t = testing::random_tensor({3, 4, 5}, 7, -1e3, 1e3);
  t[0] = 1.0 / 3.0;
  t[1] = -0.0;
  Tensor back = tensor_from_csv(tensor_to_csv(t));
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("csv layout is one row per last-axis slice") {
  Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(tensor_to_csv(t) == "# shape: 2,3\n1,2,3\n4,5,6\n");
  CHECK_THROWS_AS(tensor_from_csv("# shape: 2,2\n1,2,3\n"), Error);
}
