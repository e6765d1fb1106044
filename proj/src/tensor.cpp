#include "hds/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace hds {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  if (shape_.empty()) throw Error("Tensor: rank-0 shapes are not supported");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw Error("Tensor: rank-0 shapes are not supported");
  if (shape_numel(shape_) != data_.size())
    throw Error("Tensor: data size " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[std::inner_product(idx.begin(), idx.end(), row_strides(shape_).begin(), std::size_t{0})];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[std::inner_product(idx.begin(), idx.end(), row_strides(shape_).begin(), std::size_t{0})];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const { return first_non_finite() == data_.size(); }

std::size_t Tensor::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!std::isfinite(data_[i])) return i;
  return data_.size();
}

std::vector<std::size_t> row_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op_name) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw Error(std::string(op_name) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  const std::size_t r = out.size();
  auto own = row_strides(operand);
  std::vector<std::size_t> st(r, 0);
  for (std::size_t i = 0; i < operand.size(); ++i) {
    const std::size_t oi = r - operand.size() + i;
    st[oi] = operand[i] == 1 ? 0 : own[i];
  }
  return st;
}

}  // namespace hds
