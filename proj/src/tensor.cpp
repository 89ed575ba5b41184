// SPDX-License-Identifier: Apache-2.0
#include "diplab/tensor.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "diplab/error.hpp"

namespace diplab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

static void check_shape(const Shape& shape) {
  require(!shape.empty(), ErrorKind::shape, "tensor shape must have at least one extent");
  for (auto d : shape)
    require(d > 0, ErrorKind::shape, "tensor extents must be positive: " + shape_to_string(shape));
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  check_shape(shape_);
  require(shape_numel(shape_) == data_.size(), ErrorKind::shape,
          "shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) +
              " values");
  require(all_finite(), ErrorKind::invalid_argument, "tensor entries must be finite");
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  require(std::isfinite(value), ErrorKind::invalid_argument, "tensor entries must be finite");
  return t;
}

Tensor Tensor::from_values(std::vector<double> data) {
  Shape s{data.size()};
  return Tensor(std::move(s), std::move(data));
}

Tensor Tensor::from_eigen(const Eigen::VectorXd& v, Shape shape) {
  if (shape.empty()) shape = {static_cast<std::size_t>(v.size())};
  return Tensor(std::move(shape), std::vector<double>(v.data(), v.data() + v.size()));
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == size(), ErrorKind::shape,
          "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::squared_norm() const { return flat().squaredNorm(); }

static void same_shape(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          "shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  same_shape(a, b);
  Tensor out = a;
  out.flat() += b.flat();
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  same_shape(a, b);
  Tensor out = a;
  out.flat() -= b.flat();
  return out;
}

Tensor operator*(double c, const Tensor& a) {
  Tensor out = a;
  out.flat() *= c;
  return out;
}

std::string tensor_to_csv(const Tensor& t) {
  std::ostringstream os;
  os << "# shape: ";
  for (std::size_t i = 0; i < t.rank(); ++i) os << (i ? "," : "") << t.shape()[i];
  os << "\n";
  os.precision(17);
  const std::size_t row = t.shape().back();
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << t[i] << ((i + 1) % row == 0 ? "\n" : ",");
  }
  return os.str();
}

void write_tensor_csv(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string() + " for writing");
  f << tensor_to_csv(t);
  require(static_cast<bool>(f), ErrorKind::io, "write failed: " + path.string());
}

Tensor tensor_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Shape shape;
  std::vector<double> values;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find("shape:");
      require(pos != std::string::npos, ErrorKind::io, "unrecognised header: " + line);
      std::istringstream hs(line.substr(pos + 6));
      std::string tok;
      while (std::getline(hs, tok, ',')) shape.push_back(std::stoul(tok));
      have_header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) {
      std::size_t b = tok.find_first_not_of(" \t");
      std::size_t e = tok.find_last_not_of(" \t");
      require(b != std::string::npos, ErrorKind::io, "empty CSV field");
      values.push_back(std::stod(tok.substr(b, e - b + 1)));
    }
  }
  require(have_header, ErrorKind::io, "missing '# shape:' header");
  return Tensor(std::move(shape), std::move(values));
}

Tensor read_tensor_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return tensor_from_csv(ss.str());
}

}  // namespace diplab
