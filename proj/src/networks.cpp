// SPDX-License-Identifier: Apache-2.0
#include "diplab/networks.hpp"

#include <cmath>
#include <random>

#include "diplab/error.hpp"

namespace diplab {

std::string to_string(Family f) {
  switch (f) {
    case Family::dip_cnn_1d: return "dip-cnn-1d";
    case Family::dip_cnn_2d: return "dip-cnn-2d";
    case Family::deep_decoder_2layer: return "deep-decoder-2layer";
    case Family::deep_decoder_multi: return "deep-decoder-multi";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "dip-cnn-1d") return Family::dip_cnn_1d;
  if (s == "dip-cnn-2d") return Family::dip_cnn_2d;
  if (s == "deep-decoder-2layer") return Family::deep_decoder_2layer;
  if (s == "deep-decoder-multi" || s == "deep-decoder") return Family::deep_decoder_multi;
  throw Error(ErrorKind::config, "unknown network family '" + s + "'");
}

std::size_t NetworkSpec::width(std::size_t layer) const {
  if (channels.size() == 1) return channels[0];
  return channels[std::min(layer, channels.size() - 1)];
}

void NetworkSpec::validate() const {
  require(depth >= 1, ErrorKind::invalid_argument, "network depth must be at least 1");
  require(!channels.empty(), ErrorKind::invalid_argument, "network needs channel widths");
  for (auto c : channels) require(c > 0, ErrorKind::invalid_argument, "channel widths must be positive");
  for (auto d : output_shape) require(d > 0, ErrorKind::invalid_argument, "output extents must be positive");
  switch (family) {
    case Family::dip_cnn_1d:
    case Family::dip_cnn_2d: {
      const bool two_d = family == Family::dip_cnn_2d;
      require(output_shape.size() == (two_d ? 3u : 2u), ErrorKind::invalid_argument,
              two_d ? "dip-cnn-2d output must be [C, H, W]" : "dip-cnn-1d output must be [C, L]");
      require(kernel_size % 2 == 1, ErrorKind::invalid_argument, "kernel size must be odd");
      require(depth >= 2 * levels, ErrorKind::invalid_argument, "encoder-decoder needs depth >= 2 * levels");
      const std::size_t factor = std::size_t{1} << levels;
      for (std::size_t i = 1; i < output_shape.size(); ++i)
        require(output_shape[i] % factor == 0, ErrorKind::invalid_argument,
                "spatial extents must be divisible by 2^levels");
      break;
    }
    case Family::deep_decoder_2layer:
      require(output_shape.size() == 1, ErrorKind::invalid_argument, "deep-decoder-2layer output must be [n]");
      require(depth == 2, ErrorKind::invalid_argument, "deep-decoder-2layer has exactly two layers");
      break;
    case Family::deep_decoder_multi: {
      require(output_shape.size() == 2 || output_shape.size() == 3, ErrorKind::invalid_argument,
              "deep-decoder-multi output must be [C, L] or [C, H, W]");
      const std::size_t factor = std::size_t{1} << (depth - 1);
      for (std::size_t i = 1; i < output_shape.size(); ++i)
        require(output_shape[i] % factor == 0, ErrorKind::invalid_argument,
                "deep-decoder-multi spatial extents must be divisible by 2^(depth-1)");
      break;
    }
  }
}

std::vector<std::string> Network::param_names() const {
  std::vector<std::string> out;
  for (const auto& p : params) out.push_back(p.name);
  return out;
}

std::vector<std::string> Network::names_with_role(ParamRole role) const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (p.role == role) out.push_back(p.name);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += shape_numel(p.shape);
  return n;
}

Eigen::MatrixXd circulant_smoother(std::size_t n, double centre, double side) {
  const auto k = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    u(i, i) += centre;
    u(i, (i + 1) % k) += side;
    u(i, (i + k - 1) % k) += side;
  }
  return u;
}

namespace {

// [C, spatial...] -> [C, spatial / 2] by averaging 2 (1D) or 2x2 (2D) blocks.
NodeId average_pool(GraphBuilder& b, NodeId x, const Shape& shape) {
  const std::size_t c = shape[0];
  std::size_t in = 1, out = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) {
    in *= shape[i];
    out *= shape[i] / 2;
  }
  Tensor pool(Shape{in, out});
  if (shape.size() == 2) {
    for (std::size_t i = 0; i < in; ++i) pool[i * out + i / 2] = 0.5;
  } else {
    const std::size_t h = shape[1], w = shape[2];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) pool[(i * w + j) * out + (i / 2) * (w / 2) + j / 2] = 0.25;
  }
  Shape pooled{c};
  for (std::size_t i = 1; i < shape.size(); ++i) pooled.push_back(shape[i] / 2);
  NodeId flat = b.reshape(x, Shape{c, in});
  return b.reshape(b.matmul(flat, b.constant(std::move(pool))), pooled);
}

Network build_conv_chain(const NetworkSpec& spec) {
  Network net;
  net.spec = spec;
  GraphBuilder b;
  const bool two_d = spec.family == Family::dip_cnn_2d;
  Shape zshape = spec.output_shape;
  zshape[0] = spec.input_channels;
  net.input_name = "z";
  net.input_shape = zshape;
  NodeId x = b.leaf("z", zshape);
  const std::size_t k = spec.kernel_size;
  Shape cur = zshape;
  for (std::size_t i = 0; i < spec.depth; ++i) {
    if (spec.levels > 0 && i >= spec.depth - spec.levels) {
      x = b.upsample2(x, spec.upsample);
      for (std::size_t d = 1; d < cur.size(); ++d) cur[d] *= 2;
    }
    const std::size_t cin = i == 0 ? spec.input_channels : spec.width(i - 1);
    const std::size_t cout = i + 1 == spec.depth ? spec.output_shape[0] : spec.width(i);
    const std::string prefix = "conv" + std::to_string(i);
    Shape wshape = two_d ? Shape{cout, cin, k, k} : Shape{cout, cin, k};
    const std::size_t fan_in = cin * k * (two_d ? k : 1);
    NodeId w = b.leaf(prefix + ".weight", wshape);
    net.params.push_back({prefix + ".weight", wshape, fan_in, ParamRole::weight});
    x = two_d ? b.conv2d(x, w) : b.conv1d(x, w);
    if (spec.bias) {
      NodeId bias = b.leaf(prefix + ".bias", Shape{cout});
      net.params.push_back({prefix + ".bias", Shape{cout}, fan_in, ParamRole::bias});
      x = b.add(x, bias);
    }
    if (i + 1 < spec.depth) x = b.relu(x);
    cur[0] = cout;
    if (i < spec.levels) {
      x = average_pool(b, x, cur);
      for (std::size_t d = 1; d < cur.size(); ++d) cur[d] /= 2;
    }
  }
  net.graph = b.finish(x);
  return net;
}

Network build_two_layer(const NetworkSpec& spec) {
  Network net;
  net.spec = spec;
  const std::size_t n = spec.output_shape[0];
  const std::size_t k = spec.width(0);
  Eigen::MatrixXd u = spec.fixed_u ? *spec.fixed_u : circulant_smoother(n);
  Eigen::VectorXd v = spec.fixed_v ? *spec.fixed_v
                                   : Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k),
                                                               1.0 / std::sqrt(static_cast<double>(k)));
  require(u.rows() == static_cast<Eigen::Index>(n) && u.cols() == static_cast<Eigen::Index>(n),
          ErrorKind::invalid_argument, "fixed U must be n x n");
  require(v.size() == static_cast<Eigen::Index>(k), ErrorKind::invalid_argument, "fixed v must have k entries");

  GraphBuilder b;
  Tensor ut(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ut[i * n + j] = u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  NodeId uc = b.constant(std::move(ut));
  NodeId vc = b.constant(Tensor::from_eigen(v));
  NodeId theta = b.leaf("theta", Shape{n, k});
  // theta is the absorbed first-layer output, so each entry is its own unit.
  net.params.push_back({"theta", Shape{n, k}, 1, ParamRole::weight});
  NodeId out = b.matmul(b.relu(b.matmul(uc, theta)), vc);
  net.graph = b.finish(out);
  return net;
}

Network build_deep_decoder(const NetworkSpec& spec) {
  Network net;
  net.spec = spec;
  GraphBuilder b;
  const std::size_t factor = std::size_t{1} << (spec.depth - 1);
  Shape zshape = spec.output_shape;
  zshape[0] = spec.width(0);
  for (std::size_t i = 1; i < zshape.size(); ++i) zshape[i] /= factor;
  net.input_name = "z";
  net.input_shape = zshape;
  NodeId x = b.leaf("z", zshape);
  for (std::size_t i = 0; i < spec.depth; ++i) {
    const std::size_t cin = spec.width(i);
    const std::size_t cout = spec.width(i + 1);
    const std::string id = std::to_string(i);
    NodeId w = b.leaf("mix" + id + ".weight", Shape{cout, cin});
    net.params.push_back({"mix" + id + ".weight", Shape{cout, cin}, cin, ParamRole::weight});
    x = b.channel_mix(x, w);
    if (i + 1 < spec.depth) x = b.upsample2(x, spec.upsample);
    x = b.relu(x);
    x = b.channel_norm(x);
    NodeId gamma = b.leaf("norm" + id + ".scale", Shape{cout});
    NodeId beta = b.leaf("norm" + id + ".shift", Shape{cout});
    net.params.push_back({"norm" + id + ".scale", Shape{cout}, 1, ParamRole::norm_scale});
    net.params.push_back({"norm" + id + ".shift", Shape{cout}, 1, ParamRole::norm_shift});
    x = b.add(b.mul(x, gamma), beta);
  }
  const std::size_t klast = spec.width(spec.depth);
  NodeId wout = b.leaf("out.weight", Shape{spec.output_shape[0], klast});
  net.params.push_back({"out.weight", Shape{spec.output_shape[0], klast}, klast, ParamRole::weight});
  x = b.channel_mix(x, wout);
  net.graph = b.finish(x);
  return net;
}

}  // namespace

Network build(const NetworkSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case Family::dip_cnn_1d:
    case Family::dip_cnn_2d: return build_conv_chain(spec);
    case Family::deep_decoder_2layer: return build_two_layer(spec);
    case Family::deep_decoder_multi: return build_deep_decoder(spec);
  }
  throw Error(ErrorKind::invalid_argument, "invalid layer pattern");
}

Tensor gaussian_tensor(const Shape& shape, std::size_t fan_in, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale / std::sqrt(static_cast<double>(fan_in)));
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ParamSet init_params(const Network& net, double scale, std::uint64_t seed) {
  require(scale > 0.0, ErrorKind::invalid_argument, "init scale must be positive");
  ParamSet ps;
  ps.init_scale = scale;
  // One independent stream per parameter, derived from the run seed.
  std::seed_seq base{seed};
  std::vector<std::uint32_t> streams(2 * net.params.size());
  base.generate(streams.begin(), streams.end());
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const auto& p = net.params[i];
    const std::uint64_t s = (std::uint64_t{streams[2 * i]} << 32) | streams[2 * i + 1];
    switch (p.role) {
      case ParamRole::weight:
      case ParamRole::bias: ps.values.emplace(p.name, gaussian_tensor(p.shape, p.fan_in, scale, s)); break;
      case ParamRole::norm_scale: ps.values.emplace(p.name, Tensor::filled(p.shape, 1.0)); break;
      case ParamRole::norm_shift: ps.values.emplace(p.name, Tensor::zeros(p.shape)); break;
    }
  }
  return ps;
}

Tensor draw_input(const Network& net, std::uint64_t seed) {
  require(net.input_shape.has_value(), ErrorKind::invalid_argument, "network has no input leaf");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 0.1);
  Tensor z(*net.input_shape);
  for (double& v : z.data()) v = dist(rng);
  return z;
}

LeafValues bind_leaves(const ParamSet& params, const Tensor* z, const std::string& input_name) {
  LeafValues v = params.values;
  if (z) v.insert_or_assign(input_name, *z);
  return v;
}

ComputeGraph zero_output_shift(const Network& net, const ParamSet& params0, const Tensor* z) {
  LeafValues v = bind_leaves(params0, z, net.input_name.value_or("z"));
  Tensor f0 = forward_eval(net.graph, v);
  GraphBuilder b(net.graph);
  NodeId c = b.constant(-1.0 * f0);
  return b.finish(b.add(net.graph.root(), c));
}

}  // namespace diplab
