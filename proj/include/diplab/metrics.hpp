// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diplab/tensor.hpp"

namespace diplab {

/// Returned by psnr for an exact match.
inline constexpr double kPsnrCap = 200.0;

/// 10 log10(peak^2 n / ||xhat - x||^2), capped at kPsnrCap.
double psnr(const Tensor& xhat, const Tensor& x, double peak);

/// Default PSNR peak: the maximum entry of the ground truth.
double default_peak(const Tensor& x);

}  // namespace diplab
