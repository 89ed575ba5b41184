// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"

#include "diplab/earlystop.hpp"
#include "diplab/error.hpp"
#include "support/check.hpp"

using namespace diplab;

TEST_CASE("wmv closed forms") {
  std::vector<Tensor> same(5, Tensor(Shape{4}, {1, 2, 3, 4}));
  CHECK(wmv(same) == 0.0);
  const std::size_t n = 7;
  std::vector<Tensor> two{Tensor::zeros({n}), Tensor::filled({n}, 2.0)};
  CHECK(wmv(two) == doctest::Approx(double(n)));
  std::vector<Tensor> bad{Tensor::zeros({3}), Tensor::zeros({4})};
  CHECK_THROWS_AS(wmv(bad), Error);
}

TEST_CASE("wmv homogeneity and translation invariance") {
  std::vector<Tensor> w, scaled, shifted;
  Tensor c = testing::random_tensor({6}, 99);
  for (int i = 0; i < 5; ++i) {
    w.push_back(testing::random_tensor({6}, static_cast<std::uint64_t>(i)));
    scaled.push_back(3.0 * w.back());
    shifted.push_back(w.back() + c);
  }
  CHECK(wmv(scaled) == doctest::Approx(9.0 * wmv(w)).epsilon(1e-13));
  CHECK(wmv(shifted) == doctest::Approx(wmv(w)).epsilon(1e-12));
}

TEST_CASE("constant stream stops after exactly W + P observations") {
  EarlyStopConfig cfg{10, 25, 1e-3};
  WmvDetector det(cfg);
  Tensor x(Shape{3}, {1, 2, 3});
  std::size_t obs = 0;
  EsDecision d;
  while (!d.stop && obs < 1000) {
    d = det.observe(x);
    ++obs;
    if (obs < 10) CHECK(std::isnan(det.last_wmv()));
  }
  CHECK(obs == 35);
  REQUIRE(d.t_es.has_value());
  CHECK(*d.t_es == 9);
}

TEST_CASE("strictly shrinking variance never stops") {
  WmvDetector det(EarlyStopConfig{5, 3, 1e-3});
  Tensor e = testing::random_tensor({4}, 5);
  double r = 1.0;
  double prev = INFINITY;
  for (int t = 0; t < 400; ++t) {
    EsDecision d = det.observe(r * e);
    CHECK(!d.stop);
    if (!std::isnan(det.last_wmv())) {
      CHECK(det.last_wmv() < prev);
      prev = det.last_wmv();
    }
    r *= 0.9;
  }
}

TEST_CASE("detector is a pure function of the stream") {
  auto run = [] {
    WmvDetector det(EarlyStopConfig{4, 6, 1e-2});
    std::vector<std::size_t> stops;
    for (int t = 0; t < 200; ++t) {
      Tensor x = testing::random_tensor({3}, static_cast<std::uint64_t>(t % 17));
      if (det.observe(x).stop) stops.push_back(static_cast<std::size_t>(t));
    }
    return stops;
  };
  CHECK(run() == run());
  CHECK_THROWS_AS(WmvDetector(EarlyStopConfig{1, 1, 0.0}), Error);
}
