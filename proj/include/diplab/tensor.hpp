// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diplab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// Every extent is positive and the element count matches the shape. Entries
/// are checked to be finite when a tensor is built from caller data; the
/// mutable accessors exist for in-place optimizer updates and do not re-check.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor from_values(std::vector<double> data);
  static Tensor from_eigen(const Eigen::VectorXd& v, Shape shape = {});

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  Eigen::Map<const Eigen::VectorXd> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Eigen::VectorXd> flat() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::VectorXd to_eigen() const { return flat(); }

  /// Same data viewed under another shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  double squared_norm() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  // Aligned storage keeps Eigen's vectorized kernels on the same code path
  // for every allocation, so results are bitwise reproducible.
  Shape shape_;
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double c, const Tensor& a);

/// CSV interchange: a `# shape: d1,d2,...` header line, then the values with
/// one row per slice of the last dimension, printed with 17 significant digits.
void write_tensor_csv(const Tensor& t, const std::filesystem::path& path);
std::string tensor_to_csv(const Tensor& t);
Tensor read_tensor_csv(const std::filesystem::path& path);
Tensor tensor_from_csv(const std::string& text);

}  // namespace diplab
