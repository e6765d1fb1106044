#include "hds/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace hds {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Odometer walk over `out`, yielding linear offsets into two broadcast operands.
template <class F>
void for_each_bcast2(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  const auto st_a = broadcast_strides(sa, out);
  const auto st_b = broadcast_strides(sb, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t io = 0; io < n; ++io) {
    f(io, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += st_a[d];
      ib += st_b[d];
      if (idx[d] < out[d]) break;
      ia -= st_a[d] * out[d];
      ib -= st_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary_fwd(const Tensor& a, const Tensor& b, const char* name, F&& f) {
  if (a.same_shape(b)) {
    Tensor y(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* py = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) py[i] = f(pa[i], pb[i]);
    return y;
  }
  Shape out = broadcast_shapes(a.shape(), b.shape(), name);
  Tensor y(out);
  for_each_bcast2(out, a.shape(), b.shape(),
                  [&](std::size_t io, std::size_t ia, std::size_t ib) { y[io] = f(a[ia], b[ib]); });
  return y;
}

struct AxisDecomp {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisDecomp axis_decomp(const Shape& s, std::size_t axis, const char* name) {
  if (axis >= s.size())
    throw Error(std::string(name) + ": axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  AxisDecomp d;
  for (std::size_t i = 0; i < axis; ++i) d.outer *= s[i];
  d.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) d.inner *= s[i];
  return d;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out = {1};
  }
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::StopGrad: return "stop_gradient";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::AddConst: return "add_const";
    case Op::MulConst: return "mul_const";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::PowConst: return "pow_const";
    case Op::PowPos: return "pow_pos";
    case Op::ClampMin: return "clamp_min";
    case Op::SumAll: return "sum";
    case Op::MeanAll: return "mean";
    case Op::SumAxis: return "sum_axis";
    case Op::MeanAxis: return "mean_axis";
    case Op::LogSumExpAxis: return "logsumexp";
    case Op::MatMul: return "matmul";
    case Op::Conv1d: return "conv1d";
    case Op::AvgPool1d: return "avg_pool1d";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::RepeatRows: return "repeat_rows";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!valid()) throw Error("Var: invalid handle");
  return tape->value(*this);
}

std::int32_t Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error("Tape: Var does not belong to this tape");
  return v.id;
}

Var Tape::push(Op op, Tensor value, std::initializer_list<Var> parents, bool force_requires_grad, double c,
               std::int64_t i0, std::int64_t i1, std::int64_t i2) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.c = c;
  n.i0 = i0;
  n.i1 = i1;
  n.i2 = i2;
  n.parent_begin = static_cast<std::uint32_t>(parent_ids_.size());
  n.parent_count = static_cast<std::uint32_t>(parents.size());
  n.requires_grad = force_requires_grad;
  for (Var p : parents) {
    const auto pid = check(p);
    parent_ids_.push_back(pid);
    if (nodes_[pid].requires_grad) n.requires_grad = true;
  }
  if (op == Op::StopGrad) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::push_multi(Op op, Tensor value, const std::vector<Var>& parents, double c, std::int64_t i0) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.c = c;
  n.i0 = i0;
  n.parent_begin = static_cast<std::uint32_t>(parent_ids_.size());
  n.parent_count = static_cast<std::uint32_t>(parents.size());
  n.requires_grad = false;
  for (Var p : parents) {
    const auto pid = check(p);
    parent_ids_.push_back(pid);
    if (nodes_[pid].requires_grad) n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(const std::string& name, Tensor v) {
  if (registry_.count(name)) throw Error("Tape: duplicate parameter name '" + name + "'");
  Var out = leaf(std::move(v));
  registry_[name] = out.id;
  return out;
}

Var Tape::param_var(const std::string& name) const {
  auto it = registry_.find(name);
  if (it == registry_.end()) throw Error("Tape: unknown parameter '" + name + "'");
  return Var{const_cast<Tape*>(this), it->second};
}

Tensor Tape::grad(Var v) const {
  const auto id = check(v);
  if (nodes_[id].grad.empty()) return Tensor::zeros(nodes_[id].value.shape());
  return nodes_[id].grad;
}

const Tensor* Tape::grad_ptr(Var v) const {
  const auto id = check(v);
  return nodes_[id].grad.empty() ? nullptr : &nodes_[id].grad;
}

void Tape::clear() {
  nodes_.clear();
  parent_ids_.clear();
  registry_.clear();
}

void Tape::backward(Var root) {
  const auto rid = check(root);
  if (nodes_[rid].value.size() != 1)
    throw Error("backward: root must be scalar, got shape " + shape_str(nodes_[rid].value.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[rid].requires_grad) return;
  nodes_[rid].grad = Tensor::full(nodes_[rid].value.shape(), 1.0);
  for (std::int32_t id = rid; id >= 0; --id) {
    if (!nodes_[id].requires_grad || nodes_[id].grad.empty()) continue;
    backward_node(id);
  }
}

void Tape::backward_node(std::int32_t id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const auto want = [&](std::uint32_t i) { return parent(n, i).requires_grad; };
  const auto pgrad = [&](std::uint32_t i) -> Tensor& {
    Node& p = parent(n, i);
    ensure_grad(p);
    return p.grad;
  };
  const auto pval = [&](std::uint32_t i) -> const Tensor& { return parent(n, i).value; };

  switch (n.op) {
    case Op::Constant:
    case Op::Leaf:
    case Op::StopGrad:
      break;

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& av = pval(0);
      const Tensor& bv = pval(1);
      const bool wa = want(0), wb = want(1);
      Tensor* da = wa ? &pgrad(0) : nullptr;
      Tensor* db = wb ? &pgrad(1) : nullptr;
      auto accum = [&](std::size_t io, std::size_t ia, std::size_t ib) {
        const double go = g[io];
        switch (n.op) {
          case Op::Add:
            if (da) (*da)[ia] += go;
            if (db) (*db)[ib] += go;
            break;
          case Op::Sub:
            if (da) (*da)[ia] += go;
            if (db) (*db)[ib] -= go;
            break;
          case Op::Mul:
            if (da) (*da)[ia] += go * bv[ib];
            if (db) (*db)[ib] += go * av[ia];
            break;
          case Op::Div: {
            const double inv = 1.0 / bv[ib];
            if (da) (*da)[ia] += go * inv;
            if (db) (*db)[ib] -= go * av[ia] * inv * inv;
            break;
          }
          default: break;
        }
      };
      if (av.same_shape(bv)) {
        for (std::size_t i = 0; i < g.size(); ++i) accum(i, i, i);
      } else {
        for_each_bcast2(n.value.shape(), av.shape(), bv.shape(), accum);
      }
      break;
    }

    case Op::AddConst: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      break;
    }
    case Op::MulConst: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.c;
      break;
    }

    case Op::Exp: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.value[i];
      break;
    }
    case Op::Log: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / x[i];
      break;
    }
    case Op::Tanh: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::Relu: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) da[i] += g[i];
      break;
    }
    case Op::Softplus: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * stable_sigmoid(x[i]);
      break;
    }
    case Op::Sigmoid: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case Op::PowConst: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.c * std::pow(x[i], n.c - 1.0);
      break;
    }
    case Op::PowPos: {
      const Tensor& base = pval(0);
      const Tensor& expo = pval(1);
      const bool wa = want(0), wb = want(1);
      Tensor* da = wa ? &pgrad(0) : nullptr;
      Tensor* db = wb ? &pgrad(1) : nullptr;
      auto accum = [&](std::size_t io, std::size_t ia, std::size_t ib) {
        const double b = base[ia];
        if (b <= 0.0) return;  // value and gradients vanish at the origin
        const double y = n.value[io];
        if (da) (*da)[ia] += g[io] * expo[ib] * y / b;
        if (db) (*db)[ib] += g[io] * y * std::log(b);
      };
      if (base.same_shape(expo)) {
        for (std::size_t i = 0; i < g.size(); ++i) accum(i, i, i);
      } else {
        for_each_bcast2(n.value.shape(), base.shape(), expo.shape(), accum);
      }
      break;
    }
    case Op::ClampMin: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > n.c) da[i] += g[i];
      break;
    }

    case Op::SumAll: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const double go = g[0];
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += go;
      break;
    }
    case Op::MeanAll: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const double go = g[0] / static_cast<double>(da.size());
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += go;
      break;
    }
    case Op::SumAxis:
    case Op::MeanAxis: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const auto d = axis_decomp(pval(0).shape(), static_cast<std::size_t>(n.i0), "sum_axis");
      const double scale = n.op == Op::MeanAxis ? 1.0 / static_cast<double>(d.n) : 1.0;
      for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t t = 0; t < d.n; ++t)
          for (std::size_t i = 0; i < d.inner; ++i)
            da[(o * d.n + t) * d.inner + i] += g[o * d.inner + i] * scale;
      break;
    }
    case Op::LogSumExpAxis: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const Tensor& x = pval(0);
      const auto d = axis_decomp(x.shape(), static_cast<std::size_t>(n.i0), "logsumexp");
      for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t i = 0; i < d.inner; ++i) {
          const std::size_t oi = o * d.inner + i;
          const double y = n.value[oi];
          if (!std::isfinite(y)) continue;
          const double go = g[oi];
          for (std::size_t t = 0; t < d.n; ++t) {
            const std::size_t xi = (o * d.n + t) * d.inner + i;
            da[xi] += go * std::exp(x[xi] - y);
          }
        }
      break;
    }

    case Op::MatMul: {
      const Tensor& a = pval(0);
      const Tensor& b = pval(1);
      const auto nrow = a.dim(0), k = a.dim(1), m = b.dim(1);
      ConstMap G(g.data(), static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(m));
      if (want(0)) {
        ConstMap B(b.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
        MutMap DA(pgrad(0).data(), static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(k));
        DA.noalias() += G * B.transpose();
      }
      if (want(1)) {
        ConstMap A(a.data(), static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(k));
        MutMap DB(pgrad(1).data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
        DB.noalias() += A.transpose() * G;
      }
      break;
    }

    case Op::Conv1d: {
      const Tensor& x = pval(0);
      const Tensor& w = pval(1);
      const std::size_t stride = static_cast<std::size_t>(n.i0);
      const std::size_t batch = x.dim(0), cin = x.dim(1), tlen = x.dim(2);
      const std::size_t cout = w.dim(0), width = w.dim(2);
      const std::size_t tout = n.value.dim(2);
      const bool wx = want(0), ww = want(1);
      Tensor* dx = wx ? &pgrad(0) : nullptr;
      Tensor* dw = ww ? &pgrad(1) : nullptr;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t to = 0; to < tout; ++to) {
            const double go = g[(b * cout + co) * tout + to];
            if (go == 0.0) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t j = 0; j < width; ++j) {
                const std::size_t xi = (b * cin + ci) * tlen + to * stride + j;
                const std::size_t wi = (co * cin + ci) * width + j;
                if (dx) (*dx)[xi] += go * w[wi];
                if (dw) (*dw)[wi] += go * x[xi];
              }
          }
      break;
    }

    case Op::AvgPool1d: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const std::size_t width = static_cast<std::size_t>(n.i0);
      const std::size_t rows = n.value.size() / n.value.shape().back();
      const std::size_t tout = n.value.shape().back();
      const std::size_t tin = pval(0).shape().back();
      const double inv = 1.0 / static_cast<double>(width);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t to = 0; to < tout; ++to) {
          const double go = g[r * tout + to] * inv;
          for (std::size_t j = 0; j < width; ++j) da[r * tin + to * width + j] += go;
        }
      break;
    }

    case Op::Concat: {
      const std::size_t axis = static_cast<std::size_t>(n.i0);
      const auto dout = axis_decomp(n.value.shape(), axis, "concat");
      std::size_t offset = 0;
      for (std::uint32_t pi = 0; pi < n.parent_count; ++pi) {
        Node& p = parent(n, pi);
        const std::size_t dn = p.value.shape()[axis];
        if (p.requires_grad) {
          ensure_grad(p);
          for (std::size_t o = 0; o < dout.outer; ++o)
            for (std::size_t t = 0; t < dn; ++t)
              for (std::size_t i = 0; i < dout.inner; ++i)
                p.grad[(o * dn + t) * dout.inner + i] += g[(o * dout.n + offset + t) * dout.inner + i];
        }
        offset += dn;
      }
      break;
    }

    case Op::Slice: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const std::size_t axis = static_cast<std::size_t>(n.i0);
      const std::size_t start = static_cast<std::size_t>(n.i1);
      const std::size_t len = static_cast<std::size_t>(n.i2);
      const auto d = axis_decomp(pval(0).shape(), axis, "slice");
      for (std::size_t o = 0; o < d.outer; ++o)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t i = 0; i < d.inner; ++i)
            da[(o * d.n + start + t) * d.inner + i] += g[(o * len + t) * d.inner + i];
      break;
    }

    case Op::Reshape: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      break;
    }

    case Op::RepeatRows: {
      if (!want(0)) break;
      Tensor& da = pgrad(0);
      const std::size_t k = static_cast<std::size_t>(n.i0);
      const std::size_t rows = pval(0).dim(0);
      const std::size_t block = pval(0).size() / rows;
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < k; ++j) {
          const double* gs = g.data() + (b * k + j) * block;
          double* dd = da.data() + b * block;
          for (std::size_t i = 0; i < block; ++i) dd[i] += gs[i];
        }
      break;
    }
  }
}

// ---- op constructors --------------------------------------------------------

namespace {

Tape* same_tape(Var a, Var b, const char* name) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error(std::string(name) + ": operands must share one tape");
  return a.tape;
}

Var binary(Op op, Var a, Var b, const char* name, double (*f)(double, double)) {
  Tape* t = same_tape(a, b, name);
  return t->push(op, binary_fwd(a.value(), b.value(), name, f), {a, b});
}

template <class F>
Var unary(Op op, Var a, F&& f, double c = 0.0) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->push(op, std::move(y), {a}, false, c);
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::Add, a, b, "add", [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(Op::Sub, a, b, "sub", [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(Op::Mul, a, b, "mul", [](double x, double y) { return x * y; }); }
Var div(Var a, Var b) { return binary(Op::Div, a, b, "div", [](double x, double y) { return x / y; }); }

Var add_const(Var a, double c) {
  return unary(Op::AddConst, a, [c](double x) { return x + c; }, c);
}
Var mul_const(Var a, double c) {
  return unary(Op::MulConst, a, [c](double x) { return x * c; }, c);
}
Var neg(Var a) { return mul_const(a, -1.0); }
Var exp(Var a) {
  return unary(Op::Exp, a, [](double x) { return std::exp(x); });
}
Var log(Var a) {
  return unary(Op::Log, a, [](double x) { return std::log(x); });
}
Var tanh(Var a) {
  return unary(Op::Tanh, a, [](double x) { return std::tanh(x); });
}
Var relu(Var a) {
  return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Var softplus(Var a) {
  return unary(Op::Softplus, a, [](double x) { return stable_softplus(x); });
}
Var sigmoid(Var a) {
  return unary(Op::Sigmoid, a, [](double x) { return stable_sigmoid(x); });
}
Var pow_const(Var a, double p) {
  return unary(Op::PowConst, a, [p](double x) { return std::pow(x, p); }, p);
}
Var clamp_min(Var a, double floor) {
  return unary(Op::ClampMin, a, [floor](double x) { return x > floor ? x : floor; }, floor);
}

Var pow_pos(Var base, Var expo) {
  Tape* t = same_tape(base, expo, "pow_pos");
  Tensor y = binary_fwd(base.value(), expo.value(), "pow_pos",
                        [](double b, double e) { return b > 0.0 ? std::exp(e * std::log(b)) : 0.0; });
  return t->push(Op::PowPos, std::move(y), {base, expo});
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  return a.tape->push(Op::SumAll, Tensor::scalar(acc), {a});
}

Var mean(Var a) {
  const Tensor& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  return a.tape->push(Op::MeanAll, Tensor::scalar(acc / static_cast<double>(x.size())), {a});
}

namespace {

Var reduce_axis(Op op, Var a, std::size_t axis, bool keepdim) {
  const Tensor& x = a.value();
  const auto d = axis_decomp(x.shape(), axis, op_name(op));
  Tensor y(reduced_shape(x.shape(), axis, keepdim));
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t i = 0; i < d.inner; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d.n; ++t) acc += x[(o * d.n + t) * d.inner + i];
      y[o * d.inner + i] = op == Op::MeanAxis ? acc / static_cast<double>(d.n) : acc;
    }
  return a.tape->push(op, std::move(y), {a}, false, 0.0, static_cast<std::int64_t>(axis), keepdim ? 1 : 0);
}

}  // namespace

Var sum_axis(Var a, std::size_t axis, bool keepdim) { return reduce_axis(Op::SumAxis, a, axis, keepdim); }
Var mean_axis(Var a, std::size_t axis, bool keepdim) { return reduce_axis(Op::MeanAxis, a, axis, keepdim); }

Var logsumexp(Var a, std::size_t axis, bool keepdim) {
  const Tensor& x = a.value();
  const auto d = axis_decomp(x.shape(), axis, "logsumexp");
  Tensor y(reduced_shape(x.shape(), axis, keepdim));
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t i = 0; i < d.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < d.n; ++t) m = std::max(m, x[(o * d.n + t) * d.inner + i]);
      double acc = 0.0;
      if (std::isfinite(m)) {
        for (std::size_t t = 0; t < d.n; ++t) acc += std::exp(x[(o * d.n + t) * d.inner + i] - m);
        y[o * d.inner + i] = m + std::log(acc);
      } else {
        y[o * d.inner + i] = m;  // all -inf (or a stray +inf/nan propagates)
      }
    }
  return a.tape->push(Op::LogSumExpAxis, std::move(y), {a}, false, 0.0, static_cast<std::int64_t>(axis),
                      keepdim ? 1 : 0);
}

Var matmul(Var a, Var b) {
  Tape* t = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw Error("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  Tensor y({av.dim(0), bv.dim(1)});
  MutMap Y(y.data(), static_cast<Eigen::Index>(av.dim(0)), static_cast<Eigen::Index>(bv.dim(1)));
  ConstMap A(av.data(), static_cast<Eigen::Index>(av.dim(0)), static_cast<Eigen::Index>(av.dim(1)));
  ConstMap B(bv.data(), static_cast<Eigen::Index>(bv.dim(0)), static_cast<Eigen::Index>(bv.dim(1)));
  Y.noalias() = A * B;
  return t->push(Op::MatMul, std::move(y), {a, b});
}

Var conv1d(Var x, Var w, std::size_t stride) {
  Tape* t = same_tape(x, w, "conv1d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 3 || xv.dim(1) != wv.dim(1))
    throw Error("conv1d: need x [B,C,T] and w [F,C,W] with matching channels, got " + shape_str(xv.shape()) +
                " and " + shape_str(wv.shape()));
  if (stride == 0) throw Error("conv1d: stride must be >= 1");
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), tlen = xv.dim(2);
  const std::size_t cout = wv.dim(0), width = wv.dim(2);
  if (tlen < width)
    throw Error("conv1d: input length " + std::to_string(tlen) + " shorter than filter width " +
                std::to_string(width));
  const std::size_t tout = (tlen - width) / stride + 1;
  Tensor y({batch, cout, tout});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t to = 0; to < tout; ++to) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t j = 0; j < width; ++j)
            acc += xv[(b * cin + ci) * tlen + to * stride + j] * wv[(co * cin + ci) * width + j];
        y[(b * cout + co) * tout + to] = acc;
      }
  return t->push(Op::Conv1d, std::move(y), {x, w}, false, 0.0, static_cast<std::int64_t>(stride));
}

Var avg_pool1d(Var x, std::size_t width) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || width == 0) throw Error("avg_pool1d: bad arguments");
  const std::size_t tin = xv.shape().back();
  if (tin < width)
    throw Error("avg_pool1d: input length " + std::to_string(tin) + " shorter than pool width " +
                std::to_string(width));
  const std::size_t tout = tin / width;
  Shape oshape = xv.shape();
  oshape.back() = tout;
  const std::size_t rows = xv.size() / tin;
  Tensor y(oshape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t to = 0; to < tout; ++to) {
      double acc = 0.0;
      for (std::size_t j = 0; j < width; ++j) acc += xv[r * tin + to * width + j];
      y[r * tout + to] = acc / static_cast<double>(width);
    }
  return x.tape->push(Op::AvgPool1d, std::move(y), {x}, false, 0.0, static_cast<std::int64_t>(width));
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  Tape* t = parts[0].tape;
  const Shape& first = parts[0].value().shape();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape != t) throw Error("concat: operands must share one tape");
    const Shape& s = p.value().shape();
    if (s.size() != first.size() || axis >= s.size())
      throw Error("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw Error("concat: shapes " + shape_str(first) + " and " + shape_str(s) + " differ off-axis");
    total += s[axis];
  }
  Shape oshape = first;
  oshape[axis] = total;
  Tensor y(oshape);
  const auto dout = axis_decomp(oshape, axis, "concat");
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& xv = p.value();
    const std::size_t dn = xv.shape()[axis];
    for (std::size_t o = 0; o < dout.outer; ++o)
      for (std::size_t tt = 0; tt < dn; ++tt)
        for (std::size_t i = 0; i < dout.inner; ++i)
          y[(o * dout.n + offset + tt) * dout.inner + i] = xv[(o * dn + tt) * dout.inner + i];
    offset += dn;
  }
  return t->push_multi(Op::Concat, std::move(y), parts, 0.0, static_cast<std::int64_t>(axis));
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& xv = a.value();
  const auto d = axis_decomp(xv.shape(), axis, "slice");
  if (start + len > d.n || len == 0)
    throw Error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                ") out of bounds for shape " + shape_str(xv.shape()));
  Shape oshape = xv.shape();
  oshape[axis] = len;
  Tensor y(oshape);
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < d.inner; ++i)
        y[(o * len + t) * d.inner + i] = xv[(o * d.n + start + t) * d.inner + i];
  return a.tape->push(Op::Slice, std::move(y), {a}, false, 0.0, static_cast<std::int64_t>(axis),
                      static_cast<std::int64_t>(start), static_cast<std::int64_t>(len));
}

Var reshape(Var a, Shape shape) {
  const Tensor& xv = a.value();
  if (shape_numel(shape) != xv.size())
    throw Error("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(shape));
  Tensor y(std::move(shape), xv.vec());
  return a.tape->push(Op::Reshape, std::move(y), {a});
}

Var repeat_rows(Var a, std::size_t k) {
  const Tensor& xv = a.value();
  if (xv.rank() < 1 || k == 0) throw Error("repeat_rows: bad arguments");
  const std::size_t rows = xv.dim(0);
  const std::size_t block = xv.size() / rows;
  Shape oshape = xv.shape();
  oshape[0] = rows * k;
  Tensor y(oshape);
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < k; ++j)
      std::copy(xv.data() + b * block, xv.data() + (b + 1) * block, y.data() + (b * k + j) * block);
  return a.tape->push(Op::RepeatRows, std::move(y), {a}, false, 0.0, static_cast<std::int64_t>(k));
}

Var stop_gradient(Var a) { return a.tape->push(Op::StopGrad, a.value(), {a}); }

Var normal_logpdf(Var x, Var mean, Var log_std) {
  Var d = x - mean;
  Var inv_var = exp(mul_const(log_std, -2.0));
  return add_const(neg(log_std) - mul_const(d * d * inv_var, 0.5), -kHalfLog2Pi);
}

Var normal_logpdf(Var x, double mean_v, double std_dev) {
  Var d = add_const(x, -mean_v);
  return add_const(mul_const(d * d, -0.5 / (std_dev * std_dev)), -kHalfLog2Pi - std::log(std_dev));
}

}  // namespace hds
