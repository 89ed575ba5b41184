// SPDX-License-Identifier: Apache-2.0
//
// Differentiable expression DAG over Tensors with reverse-mode gradients.
//
// The op set is deliberately closed: it covers the untrained generators used
// in the solvers (conv chains, deep decoders, the two-layer decoder) and
// nothing else. Layout conventions:
//   * signals are channel-first: [C, L] in 1D, [C, H, W] in 2D;
//   * conv weights are [Cout, Cin, K] and [Cout, Cin, K, K];
//   * convolution is cross-correlation with zero "same" padding, stride 1;
//   * channel broadcast: add/mul accept a [C] right operand against a
//     channel-first left operand.
#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "diplab/tensor.hpp"

namespace diplab {

using NodeId = std::size_t;

enum class Op {
  leaf,
  constant,
  add,
  scale,
  matmul,
  conv1d,
  conv2d,
  channel_mix,
  relu,
  upsample2,
  channel_norm,
  mul,
  sum_squares,
  reshape,
};

enum class UpsampleMode { nearest, linear };

struct Node {
  Op op = Op::leaf;
  std::vector<NodeId> inputs;
  Shape shape;
  double scalar = 0.0;  // scale factor, or the channel-norm std floor
  UpsampleMode mode = UpsampleMode::nearest;
  std::size_t leaf = 0;
  std::shared_ptr<const Tensor> constant;
};

struct LeafInfo {
  std::string name;
  Shape shape;
};

using LeafValues = std::map<std::string, Tensor, std::less<>>;
using Gradient = std::map<std::string, Tensor, std::less<>>;

class ComputeGraph {
 public:
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<LeafInfo>& leaves() const noexcept { return leaves_; }
  NodeId root() const noexcept { return root_; }
  const Shape& output_shape() const { return nodes_[root_].shape; }
  std::size_t output_size() const { return shape_numel(output_shape()); }

  std::optional<std::size_t> find_leaf(std::string_view name) const;
  std::size_t leaf_index(std::string_view name) const;
  const LeafInfo& leaf(std::string_view name) const { return leaves_[leaf_index(name)]; }

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  std::vector<LeafInfo> leaves_;
  NodeId root_ = 0;
};

/// Appends nodes in topological order; every method validates shapes and
/// throws Error(shape) on mismatch, so a finished graph is always consistent.
class GraphBuilder {
 public:
  GraphBuilder() = default;
  /// Continue from an existing graph; its root id stays valid.
  explicit GraphBuilder(const ComputeGraph& base);

  NodeId leaf(std::string name, Shape shape);
  NodeId constant(Tensor value);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId matmul(NodeId a, NodeId b);
  NodeId conv1d(NodeId x, NodeId w);
  NodeId conv2d(NodeId x, NodeId w);
  NodeId channel_mix(NodeId x, NodeId w);
  NodeId relu(NodeId x);
  NodeId upsample2(NodeId x, UpsampleMode mode = UpsampleMode::nearest);
  NodeId channel_norm(NodeId x, double eps = 1e-6);
  NodeId mul(NodeId a, NodeId b);
  NodeId sum_squares(NodeId a);
  NodeId reshape(NodeId a, Shape shape);

  const Shape& shape_of(NodeId id) const;
  ComputeGraph finish(NodeId root) const;

 private:
  NodeId push(Node n);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<LeafInfo> leaves_;
};

/// Recorded forward pass. Holds every intermediate value so that several
/// vector-Jacobian products can reuse one evaluation. References the graph
/// and the leaf values; both must outlive the tape.
class Tape {
 public:
  Tape(const ComputeGraph& graph, const LeafValues& values);

  const Tensor& output() const { return value(graph_->root()); }
  const Tensor& value(NodeId id) const;
  const ComputeGraph& graph() const { return *graph_; }

  /// Reverse-mode sweep seeded with d(objective)/d(output).
  Gradient backprop(const Tensor& seed, std::span<const std::string> wrt) const;

 private:
  const Tensor& input(NodeId id, std::size_t k) const;

  const ComputeGraph* graph_;
  std::vector<const Tensor*> leaf_values_;
  std::vector<Tensor> values_;
  std::vector<Tensor> aux_;  // im2col buffers, channel-norm std
};

Tensor forward_eval(const ComputeGraph& graph, const LeafValues& values);

/// Gradient of a scalar root; throws Error(shape) for non-scalar roots.
Gradient backward_grad(const ComputeGraph& graph, const LeafValues& values,
                       std::span<const std::string> wrt);

/// Dense Jacobian of the flattened root with respect to the concatenated
/// flattened leaves in `wrt` order. Throws Error(budget) when rows·cols
/// exceeds `entry_budget`.
Eigen::MatrixXd jacobian(const ComputeGraph& graph, const LeafValues& values,
                         std::span<const std::string> wrt, std::size_t entry_budget = 50'000'000);

std::size_t parameter_count(const ComputeGraph& graph, std::span<const std::string> wrt);

}  // namespace diplab
