// SPDX-License-Identifier: Apache-2.0
//
// Untrained generator architectures.
//
//   dip-cnn-1d / dip-cnn-2d   plain conv/ReLU chain, input leaf "z"
//   deep-decoder-2layer       f(theta) = ReLU(U theta) v, no input leaf
//   deep-decoder-multi        (1x1 mix -> upsample -> ReLU -> channel norm
//                             with affine) per layer, upsampling skipped on
//                             the last layer, then a 1x1 output mix
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diplab/graph.hpp"

namespace diplab {

enum class Family { dip_cnn_1d, dip_cnn_2d, deep_decoder_2layer, deep_decoder_multi };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct NetworkSpec {
  Family family = Family::dip_cnn_1d;
  std::size_t depth = 3;
  /// Per-layer widths; a single entry is broadcast to every layer.
  std::vector<std::size_t> channels{64};
  std::size_t kernel_size = 3;
  /// Output tensor shape: [C, L] for 1D families, [C, H, W] for 2D, [n] for
  /// the two-layer decoder.
  Shape output_shape{1, 64};
  /// Channels of the input z for the conv families.
  std::size_t input_channels = 1;
  bool bias = true;
  UpsampleMode upsample = UpsampleMode::nearest;
  /// Conv families: 2x average-pool stages after the first `levels` convs,
  /// mirrored by 2x upsampling before the last `levels` convs. Needs
  /// depth >= 2 * levels and extents divisible by 2^levels; 0 is a plain chain.
  std::size_t levels = 0;
  std::uint64_t seed = 0;

  // deep-decoder-2layer only; defaults are a circulant width-3 smoothing U
  // and v = ones(k)/sqrt(k).
  std::optional<Eigen::MatrixXd> fixed_u;
  std::optional<Eigen::VectorXd> fixed_v;

  std::size_t width(std::size_t layer) const;
  void validate() const;
};

enum class ParamRole { weight, bias, norm_scale, norm_shift };

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  ParamRole role = ParamRole::weight;
};

/// Built generator: graph plus parameter metadata. Custom networks (tests,
/// toys) can be assembled directly from any graph.
struct Network {
  NetworkSpec spec;
  ComputeGraph graph;
  std::vector<ParamInfo> params;
  std::optional<std::string> input_name;  // "z" when the family has an input
  std::optional<Shape> input_shape;

  std::vector<std::string> param_names() const;
  std::vector<std::string> names_with_role(ParamRole role) const;
  std::size_t parameter_count() const;
  const Shape& output_shape() const { return graph.output_shape(); }
};

Network build(const NetworkSpec& spec);

struct ParamSet {
  LeafValues values;
  double init_scale = 1.0;
};

/// i.i.d. N(0, (scale/sqrt(fan_in))^2) weights and biases; normalization
/// scales start at 1 and shifts at 0. Deterministic given the seed.
ParamSet init_params(const Network& net, double scale, std::uint64_t seed);

/// Fill a tensor with N(0, (scale/sqrt(fan_in))^2) draws.
Tensor gaussian_tensor(const Shape& shape, std::size_t fan_in, double scale, std::uint64_t seed);

/// Network input z ~ U(0, 0.1), one draw per run.
Tensor draw_input(const Network& net, std::uint64_t seed);

/// Merge parameters and (optionally) the input into one leaf binding.
LeafValues bind_leaves(const ParamSet& params, const Tensor* z = nullptr, const std::string& input_name = "z");

/// f_theta(z) - f_theta0(z): identical Jacobian, zero output at theta0.
ComputeGraph zero_output_shift(const Network& net, const ParamSet& params0, const Tensor* z);

/// Circulant smoothing matrix with the given symmetric 3-tap kernel.
Eigen::MatrixXd circulant_smoother(std::size_t n, double centre = 0.5, double side = 0.25);

}  // namespace diplab
