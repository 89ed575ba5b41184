// SPDX-License-Identifier: Apache-2.0
#include "diplab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "diplab/error.hpp"

namespace diplab {

double psnr(const Tensor& xhat, const Tensor& x, double peak) {
  require(xhat.size() == x.size(), ErrorKind::shape,
          "psnr shape mismatch: " + shape_to_string(xhat.shape()) + " vs " + shape_to_string(x.shape()));
  require(peak > 0.0, ErrorKind::invalid_argument, "psnr peak must be positive");
  const double err = (xhat.flat() - x.flat()).squaredNorm();
  if (err == 0.0) return kPsnrCap;
  const double v = 10.0 * std::log10(peak * peak * static_cast<double>(x.size()) / err);
  return std::min(v, kPsnrCap);
}

double default_peak(const Tensor& x) {
  require(!x.empty(), ErrorKind::shape, "empty ground truth");
  const double m = *std::max_element(x.data().begin(), x.data().end());
  require(m > 0.0, ErrorKind::invalid_argument, "ground truth maximum must be positive to serve as PSNR peak");
  return m;
}

}  // namespace diplab
