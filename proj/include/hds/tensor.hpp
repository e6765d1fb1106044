#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace hds {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense row-major array of doubles. Rank 0 is not used; scalars are shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element at multi-index (rank must match).
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v);
  bool all_finite() const;
  /// Index of first non-finite element, or size() if all finite.
  std::size_t first_non_finite() const;

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& s);

/// Row-major strides of a shape.
std::vector<std::size_t> row_strides(const Shape& s);

/// Numpy-style broadcast of two shapes; throws Error on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op_name);

/// Strides of `operand` viewed against broadcast result shape `out`
/// (0 stride on broadcast axes, shapes aligned at the trailing end).
std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out);

}  // namespace hds
