#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hds/tensor.hpp"

namespace hds {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives
/// and has not been cleared.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

enum class Op : std::uint8_t {
  Constant,
  Leaf,
  StopGrad,
  Add,
  Sub,
  Mul,
  Div,
  AddConst,
  MulConst,
  Exp,
  Log,
  Tanh,
  Relu,
  Softplus,
  Sigmoid,
  PowConst,
  PowPos,
  ClampMin,
  SumAll,
  MeanAll,
  SumAxis,
  MeanAxis,
  LogSumExpAxis,
  MatMul,
  Conv1d,
  AvgPool1d,
  Concat,
  Slice,
  Reshape,
  RepeatRows,
};

const char* op_name(Op op);

/// Reverse-mode autodiff tape over dense double tensors.
///
/// Nodes are appended in evaluation order (which is a topological order of the
/// graph), and backward() walks them once in reverse, accumulating gradients
/// additively across fan-out. A tape is single-owner: build and differentiate
/// from one thread. Parameter values are copied in at leaf creation, so many
/// tapes may be built concurrently against shared parameter storage.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v) { return push(Op::Constant, std::move(v), {}, false); }
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  Var leaf(Tensor v) { return push(Op::Leaf, std::move(v), {}, true); }

  /// Leaf registered under a unique name for gradient readout.
  Var param(const std::string& name, Tensor v);
  const std::map<std::string, std::int32_t>& params() const { return registry_; }
  Var param_var(const std::string& name) const;

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  /// Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;
  const Tensor* grad_ptr(Var v) const;

  /// Reverse pass from a scalar root. Resets all accumulators first, so it can
  /// be called repeatedly on the same tape (e.g. for separate surrogate roots).
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Graph construction internals, used by the op free functions.
  Var push(Op op, Tensor value, std::initializer_list<Var> parents, bool force_requires_grad = false,
           double c = 0.0, std::int64_t i0 = 0, std::int64_t i1 = 0, std::int64_t i2 = 0);
  Var push_multi(Op op, Tensor value, const std::vector<Var>& parents, double c = 0.0, std::int64_t i0 = 0);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    Op op = Op::Constant;
    bool requires_grad = false;
    std::uint32_t parent_begin = 0;
    std::uint32_t parent_count = 0;
    double c = 0.0;
    std::int64_t i0 = 0, i1 = 0, i2 = 0;
  };

  std::int32_t check(Var v) const;
  void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  }
  void backward_node(std::int32_t id);
  Node& parent(const Node& n, std::uint32_t i) { return nodes_[parent_ids_[n.parent_begin + i]]; }

  std::vector<Node> nodes_;
  std::vector<std::int32_t> parent_ids_;
  std::map<std::string, std::int32_t> registry_;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_const(Var a, double c);
Var mul_const(Var a, double c);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var pow_const(Var a, double p);
/// base^expo for base >= 0 (exact zero base gives value 0 and zero gradients).
Var pow_pos(Var base, Var expo);
Var clamp_min(Var a, double floor);
Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, std::size_t axis, bool keepdim = false);
Var mean_axis(Var a, std::size_t axis, bool keepdim = false);
/// Max-shifted log-sum-exp along one axis.
Var logsumexp(Var a, std::size_t axis, bool keepdim = false);
Var matmul(Var a, Var b);
/// x: [B, C_in, T], w: [C_out, C_in, W] -> [B, C_out, (T-W)/stride + 1]
Var conv1d(Var x, Var w, std::size_t stride);
/// Non-overlapping 1-D average pooling; trailing remainder is dropped.
Var avg_pool1d(Var x, std::size_t width);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len);
Var reshape(Var a, Shape shape);
/// [B, ...] -> [B*k, ...] with each leading row block repeated k times.
Var repeat_rows(Var a, std::size_t k);
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return add_const(a, c); }
inline Var operator+(double c, Var a) { return add_const(a, c); }
inline Var operator-(Var a, double c) { return add_const(a, -c); }
inline Var operator-(double c, Var a) { return add_const(neg(a), c); }
inline Var operator*(Var a, double c) { return mul_const(a, c); }
inline Var operator*(double c, Var a) { return mul_const(a, c); }
inline Var operator/(Var a, double c) { return mul_const(a, 1.0 / c); }
inline Var operator/(double c, Var a) { return mul_const(pow_const(a, -1.0), c); }

/// log N(x | mean, exp(log_std)^2), elementwise.
Var normal_logpdf(Var x, Var mean, Var log_std);
Var normal_logpdf(Var x, double mean, double std_dev);

}  // namespace hds
