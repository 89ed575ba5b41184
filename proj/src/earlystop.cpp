// SPDX-License-Identifier: Apache-2.0
#include "diplab/earlystop.hpp"

#include <cmath>
#include <limits>

#include "diplab/error.hpp"

namespace diplab {

void EarlyStopConfig::validate() const {
  require(window >= 2, ErrorKind::invalid_argument, "early-stop window must be at least 2");
  require(patience >= 1, ErrorKind::invalid_argument, "early-stop patience must be at least 1");
  require(eps_rel >= 0.0 && eps_rel < 1.0, ErrorKind::invalid_argument, "early-stop eps must lie in [0, 1)");
}

namespace {

template <class Range>
double window_variance(const Range& window) {
  require(!window.empty(), ErrorKind::shape, "wmv needs a non-empty window");
  const Shape& s = window.front().shape();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(window.front().size()));
  for (const auto& x : window) {
    require(x.shape() == s, ErrorKind::shape, "wmv window tensors must share a shape");
    mean += x.flat();
  }
  const double w = static_cast<double>(window.size());
  mean /= w;
  double total = 0.0;
  for (const auto& x : window) total += (x.flat() - mean).squaredNorm();
  return total / w;
}

}  // namespace

double wmv(std::span<const Tensor> window) { return window_variance(window); }

WmvDetector::WmvDetector(EarlyStopConfig cfg)
    : cfg_(cfg),
      last_(std::numeric_limits<double>::quiet_NaN()),
      best_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
}

EsDecision WmvDetector::observe(const Tensor& x) {
  require(buffer_.empty() || x.shape() == buffer_.front().shape(), ErrorKind::shape,
          "iterate shape changed during early-stop monitoring");
  const std::size_t t = count_++;
  buffer_.push_back(x);
  if (buffer_.size() > cfg_.window) buffer_.pop_front();
  if (buffer_.size() < cfg_.window) return {};

  last_ = window_variance(buffer_);
  if (!best_t_ || last_ < best_ * (1.0 - cfg_.eps_rel)) {
    best_ = last_;
    best_t_ = t;
    best_x_ = x;
    stall_ = 0;
  } else {
    ++stall_;
  }
  if (stall_ >= cfg_.patience) stopped_ = true;
  return {stopped_, stopped_ ? best_t_ : std::nullopt};
}

}  // namespace diplab
