// SPDX-License-Identifier: Apache-2.0
#include "diplab/graph.hpp"

#include <algorithm>
#include <cmath>

#include "diplab/error.hpp"

namespace diplab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t, std::size_t rows) {
  const auto r = static_cast<Eigen::Index>(rows);
  return {t.data().data(), r, static_cast<Eigen::Index>(t.size() / rows)};
}
Map as_mat(Tensor& t, std::size_t rows) {
  const auto r = static_cast<Eigen::Index>(rows);
  return {t.data().data(), r, static_cast<Eigen::Index>(t.size() / rows)};
}

bool is_channel_broadcast(const Shape& a, const Shape& b) {
  return a.size() >= 2 && b.size() == 1 && b[0] == a[0];
}

// im2col for 1D: col[(ci*K + k), l] = x[ci, l + k - K/2]
void im2col_1d(const Tensor& x, std::size_t k, Tensor& col) {
  const std::size_t cin = x.shape()[0], len = x.shape()[1];
  const long pad = static_cast<long>(k / 2);
  col = Tensor(Shape{cin * k, len});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      double* dst = col.data().data() + (c * k + j) * len;
      const double* src = x.data().data() + c * len;
      for (std::size_t l = 0; l < len; ++l) {
        long s = static_cast<long>(l) + static_cast<long>(j) - pad;
        if (s >= 0 && s < static_cast<long>(len)) dst[l] = src[s];
      }
    }
}

void col2im_1d(const Tensor& col, std::size_t k, Tensor& dx) {
  const std::size_t cin = dx.shape()[0], len = dx.shape()[1];
  const long pad = static_cast<long>(k / 2);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      const double* src = col.data().data() + (c * k + j) * len;
      double* dst = dx.data().data() + c * len;
      for (std::size_t l = 0; l < len; ++l) {
        long s = static_cast<long>(l) + static_cast<long>(j) - pad;
        if (s >= 0 && s < static_cast<long>(len)) dst[s] += src[l];
      }
    }
}

void im2col_2d(const Tensor& x, std::size_t k, Tensor& col) {
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const long pad = static_cast<long>(k / 2);
  col = Tensor(Shape{cin * k * k, h * w});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col.data().data() + ((c * k + ky) * k + kx) * h * w;
        const double* src = x.data().data() + c * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          long si = static_cast<long>(i) + static_cast<long>(ky) - pad;
          if (si < 0 || si >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < w; ++j) {
            long sj = static_cast<long>(j) + static_cast<long>(kx) - pad;
            if (sj >= 0 && sj < static_cast<long>(w)) dst[i * w + j] = src[si * w + sj];
          }
        }
      }
}

void col2im_2d(const Tensor& col, std::size_t k, Tensor& dx) {
  const std::size_t cin = dx.shape()[0], h = dx.shape()[1], w = dx.shape()[2];
  const long pad = static_cast<long>(k / 2);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col.data().data() + ((c * k + ky) * k + kx) * h * w;
        double* dst = dx.data().data() + c * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          long si = static_cast<long>(i) + static_cast<long>(ky) - pad;
          if (si < 0 || si >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < w; ++j) {
            long sj = static_cast<long>(j) + static_cast<long>(kx) - pad;
            if (sj >= 0 && sj < static_cast<long>(w)) dst[si * w + sj] += src[i * w + j];
          }
        }
      }
}

// Factor-2 upsampling along one axis of a tensor viewed as [outer, len, inner].
// Each output sample is a weighted sum of at most two input samples; the
// visitor receives (output index, input index, weight) for every term, so the
// same enumeration drives the forward map and its transpose.
template <class Visit>
void upsample_terms(std::size_t len, UpsampleMode mode, Visit&& visit) {
  for (std::size_t i = 0; i < len; ++i) {
    if (mode == UpsampleMode::nearest) {
      visit(2 * i, i, 1.0);
      visit(2 * i + 1, i, 1.0);
    } else {
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 == len ? len - 1 : i + 1;
      visit(2 * i, i, 0.75);
      visit(2 * i, lo, 0.25);
      visit(2 * i + 1, i, 0.75);
      visit(2 * i + 1, hi, 0.25);
    }
  }
}

Tensor upsample_axis(const Tensor& x, std::size_t axis, UpsampleMode mode) {
  Shape s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape so = s;
  so[axis] = 2 * len;
  Tensor out(so);
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    upsample_terms(len, mode, [&](std::size_t oi, std::size_t ii, double wgt) {
      const double* a = src + (o * len + ii) * inner;
      double* b = dst + (o * 2 * len + oi) * inner;
      for (std::size_t q = 0; q < inner; ++q) b[q] += wgt * a[q];
    });
  return out;
}

Tensor upsample_axis_adjoint(const Tensor& dout, std::size_t axis, UpsampleMode mode) {
  Shape s = dout.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis] / 2;
  Shape si = s;
  si[axis] = len;
  Tensor din(si);
  const double* src = dout.data().data();
  double* dst = din.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    upsample_terms(len, mode, [&](std::size_t oi, std::size_t ii, double wgt) {
      const double* a = src + (o * 2 * len + oi) * inner;
      double* b = dst + (o * len + ii) * inner;
      for (std::size_t q = 0; q < inner; ++q) b[q] += wgt * a[q];
    });
  return din;
}

void accumulate(Tensor& into, const Tensor& delta) {
  if (into.empty())
    into = delta;
  else
    into.flat() += delta.flat();
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph / builder

std::optional<std::size_t> ComputeGraph::find_leaf(std::string_view name) const {
  for (std::size_t i = 0; i < leaves_.size(); ++i)
    if (leaves_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ComputeGraph::leaf_index(std::string_view name) const {
  auto i = find_leaf(name);
  require(i.has_value(), ErrorKind::invalid_argument, "no leaf named '" + std::string(name) + "'");
  return *i;
}

GraphBuilder::GraphBuilder(const ComputeGraph& base) : nodes_(base.nodes_), leaves_(base.leaves_) {}

void GraphBuilder::check_id(NodeId id) const {
  require(id < nodes_.size(), ErrorKind::invalid_argument, "unknown node id");
}

const Shape& GraphBuilder::shape_of(NodeId id) const {
  check_id(id);
  return nodes_[id].shape;
}

NodeId GraphBuilder::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId GraphBuilder::leaf(std::string name, Shape shape) {
  require(!shape.empty() && shape_numel(shape) > 0, ErrorKind::shape, "leaf '" + name + "' has empty shape");
  for (const auto& l : leaves_)
    require(l.name != name, ErrorKind::invalid_argument, "duplicate leaf '" + name + "'");
  Node n;
  n.op = Op::leaf;
  n.shape = shape;
  n.leaf = leaves_.size();
  leaves_.push_back({std::move(name), std::move(shape)});
  return push(std::move(n));
}

NodeId GraphBuilder::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.shape = value.shape();
  n.constant = std::make_shared<const Tensor>(std::move(value));
  return push(std::move(n));
}

NodeId GraphBuilder::add(NodeId a, NodeId b) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  require(sa == sb || is_channel_broadcast(sa, sb), ErrorKind::shape,
          "add: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  return push({Op::add, {a, b}, sa});
}

NodeId GraphBuilder::mul(NodeId a, NodeId b) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  require(sa == sb || is_channel_broadcast(sa, sb), ErrorKind::shape,
          "mul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  return push({Op::mul, {a, b}, sa});
}

NodeId GraphBuilder::scale(NodeId a, double c) {
  Node n{Op::scale, {a}, shape_of(a)};
  n.scalar = c;
  return push(std::move(n));
}

NodeId GraphBuilder::matmul(NodeId a, NodeId b) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  require(sa.size() == 2 && (sb.size() == 1 || sb.size() == 2) && sa[1] == sb[0], ErrorKind::shape,
          "matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  Shape out = sb.size() == 1 ? Shape{sa[0]} : Shape{sa[0], sb[1]};
  return push({Op::matmul, {a, b}, out});
}

NodeId GraphBuilder::conv1d(NodeId x, NodeId w) {
  const Shape& sx = shape_of(x);
  const Shape& sw = shape_of(w);
  require(sx.size() == 2 && sw.size() == 3 && sw[1] == sx[0] && sw[2] % 2 == 1, ErrorKind::shape,
          "conv1d: need x [Cin,L], w [Cout,Cin,K] with odd K; got " + shape_to_string(sx) + ", " +
              shape_to_string(sw));
  return push({Op::conv1d, {x, w}, Shape{sw[0], sx[1]}});
}

NodeId GraphBuilder::conv2d(NodeId x, NodeId w) {
  const Shape& sx = shape_of(x);
  const Shape& sw = shape_of(w);
  require(sx.size() == 3 && sw.size() == 4 && sw[1] == sx[0] && sw[2] == sw[3] && sw[2] % 2 == 1,
          ErrorKind::shape,
          "conv2d: need x [Cin,H,W], w [Cout,Cin,K,K] with odd K; got " + shape_to_string(sx) + ", " +
              shape_to_string(sw));
  return push({Op::conv2d, {x, w}, Shape{sw[0], sx[1], sx[2]}});
}

NodeId GraphBuilder::channel_mix(NodeId x, NodeId w) {
  const Shape& sx = shape_of(x);
  const Shape& sw = shape_of(w);
  require(sx.size() >= 2 && sw.size() == 2 && sw[1] == sx[0], ErrorKind::shape,
          "channel_mix: need x [Cin,...], w [Cout,Cin]; got " + shape_to_string(sx) + ", " +
              shape_to_string(sw));
  Shape out = sx;
  out[0] = sw[0];
  return push({Op::channel_mix, {x, w}, out});
}

NodeId GraphBuilder::relu(NodeId x) { return push({Op::relu, {x}, shape_of(x)}); }

NodeId GraphBuilder::upsample2(NodeId x, UpsampleMode mode) {
  const Shape& sx = shape_of(x);
  require(sx.size() >= 2, ErrorKind::shape, "upsample2: need channel-first input with spatial axes");
  Shape out = sx;
  for (std::size_t i = 1; i < out.size(); ++i) out[i] *= 2;
  Node n{Op::upsample2, {x}, out};
  n.mode = mode;
  return push(std::move(n));
}

NodeId GraphBuilder::channel_norm(NodeId x, double eps) {
  const Shape& sx = shape_of(x);
  require(sx.size() >= 2, ErrorKind::shape, "channel_norm: need channel-first input");
  require(eps > 0, ErrorKind::invalid_argument, "channel_norm: eps must be positive");
  Node n{Op::channel_norm, {x}, sx};
  n.scalar = eps;
  return push(std::move(n));
}

NodeId GraphBuilder::sum_squares(NodeId a) {
  shape_of(a);
  return push({Op::sum_squares, {a}, Shape{1}});
}

NodeId GraphBuilder::reshape(NodeId a, Shape shape) {
  require(shape_numel(shape) == shape_numel(shape_of(a)) && !shape.empty(), ErrorKind::shape,
          "reshape: element count mismatch");
  return push({Op::reshape, {a}, std::move(shape)});
}

ComputeGraph GraphBuilder::finish(NodeId root) const {
  check_id(root);
  ComputeGraph g;
  g.nodes_ = nodes_;
  g.leaves_ = leaves_;
  g.root_ = root;
  return g;
}

std::size_t parameter_count(const ComputeGraph& graph, std::span<const std::string> wrt) {
  std::size_t p = 0;
  for (const auto& name : wrt) p += shape_numel(graph.leaf(name).shape);
  return p;
}

// ---------------------------------------------------------------------------
// Forward

Tape::Tape(const ComputeGraph& graph, const LeafValues& values) : graph_(&graph) {
  const auto& leaves = graph.leaves();
  leaf_values_.resize(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto it = values.find(leaves[i].name);
    require(it != values.end(), ErrorKind::unbound_leaf, "leaf '" + leaves[i].name + "' is not bound");
    require(it->second.shape() == leaves[i].shape, ErrorKind::shape,
            "leaf '" + leaves[i].name + "' expects " + shape_to_string(leaves[i].shape) + ", got " +
                shape_to_string(it->second.shape()));
    leaf_values_[i] = &it->second;
  }

  const auto& nodes = graph.nodes();
  values_.resize(nodes.size());
  aux_.resize(nodes.size());
  for (NodeId id = 0; id <= graph.root(); ++id) {
    const Node& n = nodes[id];
    Tensor& out = values_[id];
    switch (n.op) {
      case Op::leaf:
        break;  // read through leaf_values_
      case Op::constant:
        break;  // read through n.constant
      case Op::add: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        out = a;
        if (a.shape() == b.shape()) {
          out.flat() += b.flat();
        } else {
          auto m = as_mat(out, a.shape()[0]);
          m.colwise() += b.flat();
        }
        break;
      }
      case Op::mul: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        out = a;
        if (a.shape() == b.shape()) {
          out.flat().array() *= b.flat().array();
        } else {
          auto m = as_mat(out, a.shape()[0]);
          m = b.flat().asDiagonal() * m;
        }
        break;
      }
      case Op::scale:
        out = n.scalar * input(id, 0);
        break;
      case Op::matmul: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        out = Tensor(n.shape);
        as_mat(out, a.shape()[0]).noalias() = as_mat(a, a.shape()[0]) * as_mat(b, b.shape()[0]);
        break;
      }
      case Op::conv1d: {
        const Tensor& x = input(id, 0);
        const Tensor& w = input(id, 1);
        im2col_1d(x, w.shape()[2], aux_[id]);
        out = Tensor(n.shape);
        as_mat(out, n.shape[0]).noalias() = as_mat(w, w.shape()[0]) * as_mat(aux_[id], aux_[id].shape()[0]);
        break;
      }
      case Op::conv2d: {
        const Tensor& x = input(id, 0);
        const Tensor& w = input(id, 1);
        im2col_2d(x, w.shape()[2], aux_[id]);
        out = Tensor(n.shape);
        as_mat(out, n.shape[0]).noalias() = as_mat(w, w.shape()[0]) * as_mat(aux_[id], aux_[id].shape()[0]);
        break;
      }
      case Op::channel_mix: {
        const Tensor& x = input(id, 0);
        const Tensor& w = input(id, 1);
        out = Tensor(n.shape);
        as_mat(out, n.shape[0]).noalias() = as_mat(w, w.shape()[0]) * as_mat(x, x.shape()[0]);
        break;
      }
      case Op::relu: {
        out = input(id, 0);
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case Op::upsample2: {
        Tensor cur = input(id, 0);
        for (std::size_t axis = 1; axis < cur.rank(); ++axis) cur = upsample_axis(cur, axis, n.mode);
        out = std::move(cur);
        break;
      }
      case Op::channel_norm: {
        const Tensor& x = input(id, 0);
        const std::size_t c = x.shape()[0];
        out = x;
        auto m = as_mat(out, c);
        Tensor stdev(Shape{c});
        for (std::size_t i = 0; i < c; ++i) {
          auto row = m.row(static_cast<Eigen::Index>(i));
          row.array() -= row.mean();
          const double sd = std::sqrt(row.squaredNorm() / static_cast<double>(row.size()));
          stdev[i] = std::max(sd, n.scalar);
          row /= stdev[i];
        }
        aux_[id] = std::move(stdev);
        break;
      }
      case Op::sum_squares:
        out = Tensor(Shape{1}, {input(id, 0).squared_norm()});
        break;
      case Op::reshape:
        out = input(id, 0).reshaped(n.shape);
        break;
    }
  }
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = graph_->nodes()[id];
  if (n.op == Op::leaf) return *leaf_values_[n.leaf];
  if (n.op == Op::constant) return *n.constant;
  return values_[id];
}

const Tensor& Tape::input(NodeId id, std::size_t k) const { return value(graph_->nodes()[id].inputs[k]); }

// ---------------------------------------------------------------------------
// Reverse

Gradient Tape::backprop(const Tensor& seed, std::span<const std::string> wrt) const {
  const auto& nodes = graph_->nodes();
  const NodeId root = graph_->root();
  require(seed.shape() == nodes[root].shape, ErrorKind::shape,
          "seed shape " + shape_to_string(seed.shape()) + " does not match output " +
              shape_to_string(nodes[root].shape));

  std::vector<char> want_leaf(graph_->leaves().size(), 0);
  for (const auto& name : wrt) want_leaf[graph_->leaf_index(name)] = 1;

  std::vector<char> needs(root + 1, 0);
  for (NodeId id = 0; id <= root; ++id) {
    const Node& n = nodes[id];
    if (n.op == Op::leaf)
      needs[id] = want_leaf[n.leaf];
    else
      for (NodeId in : n.inputs) needs[id] = needs[id] || needs[in];
  }

  std::vector<Tensor> adj(root + 1);
  if (needs[root]) adj[root] = seed;

  for (NodeId id = root + 1; id-- > 0;) {
    const Node& n = nodes[id];
    if (!needs[id] || adj[id].empty() || n.op == Op::leaf || n.op == Op::constant) continue;
    const Tensor& g = adj[id];
    auto need_in = [&](std::size_t k) { return needs[n.inputs[k]] != 0; };
    auto give = [&](std::size_t k, Tensor delta) { accumulate(adj[n.inputs[k]], delta); };

    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::add: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        if (need_in(0)) give(0, g);
        if (need_in(1)) {
          if (a.shape() == b.shape()) {
            give(1, g);
          } else {
            Tensor db(b.shape());
            db.flat() = as_mat(g, a.shape()[0]).rowwise().sum();
            give(1, std::move(db));
          }
        }
        break;
      }
      case Op::mul: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        if (a.shape() == b.shape()) {
          if (need_in(0)) {
            Tensor da = g;
            da.flat().array() *= b.flat().array();
            give(0, std::move(da));
          }
          if (need_in(1)) {
            Tensor db = g;
            db.flat().array() *= a.flat().array();
            give(1, std::move(db));
          }
        } else {
          const std::size_t c = a.shape()[0];
          if (need_in(0)) {
            Tensor da = g;
            auto m = as_mat(da, c);
            m = b.flat().asDiagonal() * m;
            give(0, std::move(da));
          }
          if (need_in(1)) {
            Tensor db(b.shape());
            db.flat() = as_mat(g, c).cwiseProduct(as_mat(a, c)).rowwise().sum();
            give(1, std::move(db));
          }
        }
        break;
      }
      case Op::scale:
        if (need_in(0)) give(0, n.scalar * g);
        break;
      case Op::matmul: {
        const Tensor& a = input(id, 0);
        const Tensor& b = input(id, 1);
        const std::size_t m = a.shape()[0], k = a.shape()[1];
        if (need_in(0)) {
          Tensor da(a.shape());
          as_mat(da, m).noalias() = as_mat(g, m) * as_mat(b, k).transpose();
          give(0, std::move(da));
        }
        if (need_in(1)) {
          Tensor db(b.shape());
          as_mat(db, k).noalias() = as_mat(a, m).transpose() * as_mat(g, m);
          give(1, std::move(db));
        }
        break;
      }
      case Op::conv1d:
      case Op::conv2d: {
        const Tensor& x = input(id, 0);
        const Tensor& w = input(id, 1);
        const Tensor& col = aux_[id];
        const std::size_t cout = w.shape()[0];
        const std::size_t k = w.shape()[2];
        if (need_in(1)) {
          Tensor dw(w.shape());
          as_mat(dw, cout).noalias() = as_mat(g, cout) * as_mat(col, col.shape()[0]).transpose();
          give(1, std::move(dw));
        }
        if (need_in(0)) {
          Tensor dcol(col.shape());
          as_mat(dcol, col.shape()[0]).noalias() = as_mat(w, cout).transpose() * as_mat(g, cout);
          Tensor dx(x.shape());
          if (n.op == Op::conv1d)
            col2im_1d(dcol, k, dx);
          else
            col2im_2d(dcol, k, dx);
          give(0, std::move(dx));
        }
        break;
      }
      case Op::channel_mix: {
        const Tensor& x = input(id, 0);
        const Tensor& w = input(id, 1);
        const std::size_t cout = w.shape()[0], cin = w.shape()[1];
        if (need_in(1)) {
          Tensor dw(w.shape());
          as_mat(dw, cout).noalias() = as_mat(g, cout) * as_mat(x, cin).transpose();
          give(1, std::move(dw));
        }
        if (need_in(0)) {
          Tensor dx(x.shape());
          as_mat(dx, cin).noalias() = as_mat(w, cout).transpose() * as_mat(g, cout);
          give(0, std::move(dx));
        }
        break;
      }
      case Op::relu: {
        if (!need_in(0)) break;
        const Tensor& x = input(id, 0);
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (!(x[i] > 0.0)) dx[i] = 0.0;
        give(0, std::move(dx));
        break;
      }
      case Op::upsample2: {
        if (!need_in(0)) break;
        Tensor cur = g;
        for (std::size_t axis = cur.rank() - 1; axis >= 1; --axis)
          cur = upsample_axis_adjoint(cur, axis, n.mode);
        give(0, std::move(cur));
        break;
      }
      case Op::channel_norm: {
        if (!need_in(0)) break;
        const Tensor& y = values_[id];
        const Tensor& sd = aux_[id];
        const std::size_t c = y.shape()[0];
        Tensor dx = g;
        auto dm = as_mat(dx, c);
        auto ym = as_mat(y, c);
        for (std::size_t i = 0; i < c; ++i) {
          const auto r = static_cast<Eigen::Index>(i);
          auto row = dm.row(r);
          const double mean_g = row.mean();
          if (sd[i] > n.scalar) {
            const double mean_gy = row.dot(ym.row(r)) / static_cast<double>(row.size());
            row = (row.array() - mean_g - ym.row(r).array() * mean_gy) / sd[i];
          } else {
            row = (row.array() - mean_g) / n.scalar;
          }
        }
        give(0, std::move(dx));
        break;
      }
      case Op::sum_squares: {
        if (!need_in(0)) break;
        give(0, (2.0 * g[0]) * input(id, 0));
        break;
      }
      case Op::reshape:
        if (need_in(0)) give(0, g.reshaped(nodes[n.inputs[0]].shape));
        break;
    }
  }

  Gradient out;
  for (const auto& name : wrt) {
    const std::size_t li = graph_->leaf_index(name);
    Tensor total(graph_->leaves()[li].shape);
    for (NodeId id = 0; id <= root; ++id)
      if (nodes[id].op == Op::leaf && nodes[id].leaf == li && !adj[id].empty()) total.flat() += adj[id].flat();
    out.emplace(name, std::move(total));
  }
  return out;
}

Tensor forward_eval(const ComputeGraph& graph, const LeafValues& values) {
  Tape tape(graph, values);
  return tape.output();
}

Gradient backward_grad(const ComputeGraph& graph, const LeafValues& values, std::span<const std::string> wrt) {
  require(graph.output_size() == 1, ErrorKind::shape,
          "backward_grad requires a scalar root, got " + shape_to_string(graph.output_shape()));
  Tape tape(graph, values);
  return tape.backprop(Tensor(graph.output_shape(), {1.0}), wrt);
}

Eigen::MatrixXd jacobian(const ComputeGraph& graph, const LeafValues& values, std::span<const std::string> wrt,
                         std::size_t entry_budget) {
  const std::size_t n = graph.output_size();
  const std::size_t p = parameter_count(graph, wrt);
  require(n * p <= entry_budget, ErrorKind::budget,
          "jacobian of " + std::to_string(n) + "x" + std::to_string(p) + " exceeds entry budget " +
              std::to_string(entry_budget));
  Tape tape(graph, values);
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Tensor seed(graph.output_shape());
  for (std::size_t i = 0; i < n; ++i) {
    seed[i] = 1.0;
    Gradient g = tape.backprop(seed, wrt);
    seed[i] = 0.0;
    Eigen::Index col = 0;
    for (const auto& name : wrt) {
      const Tensor& t = g.at(name);
      jac.row(static_cast<Eigen::Index>(i)).segment(col, static_cast<Eigen::Index>(t.size())) = t.flat().transpose();
      col += static_cast<Eigen::Index>(t.size());
    }
  }
  return jac;
}

}  // namespace diplab
