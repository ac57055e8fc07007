#include "rcg/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace rcg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct View2 {
  std::size_t r = 1;
  std::size_t c = 1;
};

View2 view2(const Tensor& t) {
  if (t.rank() == 0) return {1, 1};
  if (t.rank() == 1) return {1, t.dim(0)};
  return {t.rows(), t.cols()};
}

struct Broadcast {
  std::size_t rows = 0;
  std::size_t cols = 0;
  View2 a;
  View2 b;
  Shape out;
  bool same = false;
};

Broadcast plan_broadcast(std::string_view op, const Tensor& a, const Tensor& b) {
  Broadcast p;
  p.a = view2(a);
  p.b = view2(b);
  p.rows = std::max(p.a.r, p.b.r);
  p.cols = std::max(p.a.c, p.b.c);
  auto fits = [&](View2 v) { return (v.r == 1 || v.r == p.rows) && (v.c == 1 || v.c == p.cols); };
  if (!fits(p.a) || !fits(p.b)) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (p.a.r == p.rows && p.a.c == p.cols) {
    p.out = a.shape();
  } else if (p.b.r == p.rows && p.b.c == p.cols) {
    p.out = b.shape();
  } else {
    p.out = Shape{p.rows, p.cols};
  }
  p.same = p.a.r == p.b.r && p.a.c == p.b.c;
  return p;
}

inline std::size_t bidx(View2 v, std::size_t r, std::size_t c) {
  return (v.r == 1 ? 0 : r) * v.c + (v.c == 1 ? 0 : c);
}

void require_same_tape(std::string_view op, Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(op) + ": invalid variable");
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

Tape& tape_of(std::string_view op, Var x) {
  if (!x.valid()) throw std::invalid_argument(std::string(op) + ": invalid variable");
  return *x.tape();
}

void check_finite(std::string_view op, const Tensor& t) {
  if (!t.all_finite()) throw NumericalError(std::string(op) + ": produced a non-finite value");
}

}  // namespace

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::affine: return "affine";
    case OpKind::concat: return "concat";
    case OpKind::stack: return "stack";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::sum_last: return "sum_last";
    case OpKind::mean: return "mean";
    case OpKind::max_last: return "max_last";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::scatter_add: return "scatter_add";
    case OpKind::masked_fill: return "masked_fill";
    case OpKind::gather: return "gather";
    case OpKind::slice_last: return "slice_last";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterSet::get(std::string_view name) const {
  Parameter* p = find(name);
  if (!p) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return *p;
}

std::vector<Parameter*> ParameterSet::list() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterSet::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
  if (!tape_) throw std::invalid_argument("value of an invalid variable");
  return tape_->value(*this);
}

Var Tape::push(Node node) {
  node.needs_grad = node.op == OpKind::parameter;
  for (std::uint32_t in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tape::Node& Tape::node(Var v) { return nodes_.at(v.id()); }
const Tape::Node& Tape::node(Var v) const { return nodes_.at(v.id()); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = OpKind::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  for (const auto& [ptr, id] : param_nodes_) {
    if (ptr == &p) return Var(this, id);
  }
  Node n;
  n.op = OpKind::parameter;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace_back(&p, v.id());
  return v;
}

Var Tape::custom(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.op = OpKind::custom;
  for (Var v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("custom: input from another tape");
    n.inputs.push_back(v.id());
  }
  n.value = std::move(value);
  n.custom = std::make_shared<BackwardFn>(std::move(backward));
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

Tensor Tape::grad(Var v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor(value(v).shape());
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  param_nodes_.clear();
}

Tensor& Tape::grad_slot(std::uint32_t id) {
  Tensor& g = grads_[id];
  if (g.empty() && !(nodes_[id].param ? nodes_[id].param->value : nodes_[id].value).empty()) {
    g = Tensor((nodes_[id].param ? nodes_[id].param->value : nodes_[id].value).shape());
  }
  return g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = value(loss);
  if (lv.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id()] = Tensor(lv.shape(), 1.0);
  for (std::int64_t id = loss.id(); id >= 0; --id) {
    const auto uid = static_cast<std::uint32_t>(id);
    if (grads_[uid].empty() || !nodes_[uid].needs_grad) continue;
    backward_node(uid, grads_[uid]);
  }
}

void Tape::backward_node(std::uint32_t id, const Tensor& g) {
  Node& n = nodes_[id];
  auto in_value = [&](std::size_t k) -> const Tensor& {
    const Node& in = nodes_[n.inputs[k]];
    return in.param ? in.param->value : in.value;
  };

  switch (n.op) {
    case OpKind::constant:
      return;
    case OpKind::parameter: {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      auto pg = p.grad.data();
      auto gd = g.data();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += gd[i];
      return;
    }
    case OpKind::matmul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.rank() == 1 ? 1 : a.dim(0);
      const std::size_t k = a.rank() == 1 ? a.dim(0) : a.dim(1);
      const std::size_t p = b.rank() == 1 ? 1 : b.dim(1);
      ConstMatMap A(a.data().data(), m, k);
      ConstMatMap B(b.data().data(), k, p);
      ConstMatMap G(g.data().data(), m, p);
      if (nodes_[n.inputs[0]].needs_grad) {
        Tensor& ga = grad_slot(n.inputs[0]);
        MatMap GA(ga.data().data(), m, k);
        if (m == 1) {
          GA.row(0).noalias() += G.row(0) * B.transpose();
        } else {
          GA.noalias() += G * B.transpose();
        }
      }
      if (nodes_[n.inputs[1]].needs_grad) {
        Tensor& gb = grad_slot(n.inputs[1]);
        MatMap GB(gb.data().data(), k, p);
        if (m == 1) {
          GB.noalias() += A.row(0).transpose() * G.row(0);  // outer product
        } else {
          GB.noalias() += A.transpose() * G;
        }
      }
      return;
    }
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const Broadcast bc = plan_broadcast(op_name(n.op), a, b);
      Tensor& ga = grad_slot(n.inputs[0]);
      Tensor& gb = grad_slot(n.inputs[1]);
      const double sign_b = n.op == OpKind::sub ? -1.0 : 1.0;
      if (bc.same) {
        const std::size_t len = g.numel();
        if (n.op == OpKind::mul) {
          for (std::size_t i = 0; i < len; ++i) {
            ga[i] += g[i] * b[i];
            gb[i] += g[i] * a[i];
          }
        } else {
          for (std::size_t i = 0; i < len; ++i) {
            ga[i] += g[i];
            gb[i] += sign_b * g[i];
          }
        }
        return;
      }
      for (std::size_t r = 0; r < bc.rows; ++r) {
        for (std::size_t c = 0; c < bc.cols; ++c) {
          const std::size_t o = r * bc.cols + c;
          const std::size_t ia = bidx(bc.a, r, c);
          const std::size_t ib = bidx(bc.b, r, c);
          if (n.op == OpKind::mul) {
            ga[ia] += g[o] * b[ib];
            gb[ib] += g[o] * a[ia];
          } else {
            ga[ia] += g[o];
            gb[ib] += sign_b * g[o];
          }
        }
      }
      return;
    }
    case OpKind::affine: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += n.a * g[i];
      return;
    }
    case OpKind::concat: {
      const std::size_t rows = n.value.rows();
      const std::size_t total = n.value.cols();
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = in_value(k).cols();
        Tensor& gk = grad_slot(n.inputs[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) gk[r * w + c] += g[r * total + off + c];
        }
        off += w;
      }
      return;
    }
    case OpKind::stack: {
      const std::size_t each = g.numel() / n.inputs.size();
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Tensor& gk = grad_slot(n.inputs[k]);
        for (std::size_t i = 0; i < each; ++i) gk[i] += g[k * each + i];
      }
      return;
    }
    case OpKind::sigmoid: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      return;
    }
    case OpKind::tanh: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      return;
    }
    case OpKind::relu: {
      const Tensor& x = in_value(0);
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] > 0.0) gx[i] += g[i];
      }
      return;
    }
    case OpKind::softmax: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t cols = n.value.cols();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const double* y = n.value.data().data() + r * cols;
        const double* gr = g.data().data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (gr[c] - dot);
      }
      return;
    }
    case OpKind::log: {
      const Tensor& x = in_value(0);
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] / x[i];
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const double scale = n.op == OpKind::mean ? 1.0 / static_cast<double>(gx.numel()) : 1.0;
      const double gv = g[0] * scale;
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
      return;
    }
    case OpKind::sum_last: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t cols = gx.cols();
      for (std::size_t r = 0; r < gx.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
      }
      return;
    }
    case OpKind::max_last: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t cols = gx.cols();
      for (std::size_t r = 0; r < n.index.size(); ++r) gx[r * cols + n.index[r]] += g[r];
      return;
    }
    case OpKind::l2_normalize: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t cols = n.value.cols();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const double* y = n.value.data().data() + r * cols;
        const double* gr = g.data().data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
        const double inv = 1.0 / n.aux[r];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += (gr[c] - y[c] * dot) * inv;
      }
      return;
    }
    case OpKind::scatter_add: {
      Tensor& gs = grad_slot(n.inputs[0]);
      const std::size_t len = gs.cols();
      const std::size_t width = n.value.cols();
      for (std::size_t r = 0; r < gs.rows(); ++r) {
        for (std::size_t j = 0; j < len; ++j) gs[r * len + j] += g[r * width + n.index[r * len + j]];
      }
      return;
    }
    case OpKind::masked_fill: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t period = n.mask.size();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (n.mask[i % period]) gx[i] += g[i];
      }
      return;
    }
    case OpKind::gather: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t lead = gx.rank() == 0 ? 1 : gx.dim(0);
      const std::size_t width = lead == 0 ? 0 : gx.numel() / lead;
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        for (std::size_t c = 0; c < width; ++c) gx[n.index[i] * width + c] += g[i * width + c];
      }
      return;
    }
    case OpKind::slice_last: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t src_cols = gx.cols();
      const std::size_t len = n.value.cols();
      for (std::size_t r = 0; r < gx.rows(); ++r) {
        for (std::size_t c = 0; c < len; ++c) gx[r * src_cols + n.offset + c] += g[r * len + c];
      }
      return;
    }
    case OpKind::transpose: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t rows = gx.dim(0);
      const std::size_t cols = gx.dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c * rows + r];
      }
      return;
    }
    case OpKind::reshape: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
      return;
    }
    case OpKind::clamp_min: {
      const Tensor& x = in_value(0);
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (x[i] > n.a) gx[i] += g[i];
      }
      return;
    }
    case OpKind::custom: {
      std::vector<const Tensor*> ins;
      std::vector<Tensor*> gins;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        ins.push_back(&in_value(k));
        gins.push_back(&grad_slot(n.inputs[k]));
      }
      (*n.custom)(g, ins, gins);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1 || av.rank() > 2 || bv.rank() < 1 || bv.rank() > 2) {
    throw ShapeError("matmul: operands must have rank 1 or 2, got " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.rank() == 1 ? 1 : av.dim(0);
  const std::size_t k = av.rank() == 1 ? av.dim(0) : av.dim(1);
  const std::size_t kb = bv.dim(0);
  const std::size_t p = bv.rank() == 1 ? 1 : bv.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Shape out;
  if (av.rank() == 2) out.push_back(m);
  if (bv.rank() == 2) out.push_back(p);
  Tensor value(out);
  ConstMatMap A(av.data().data(), m, k);
  ConstMatMap B(bv.data().data(), k, p);
  MatMap C(value.data().data(), m, p);
  if (m == 1) {
    C.row(0).noalias() = A.row(0) * B;
  } else {
    C.noalias() = A * B;
  }
  Tape::Node n;
  n.op = OpKind::matmul;
  n.inputs = {a.id(), b.id()};
  n.value = std::move(value);
  return t.push(std::move(n));
}

namespace {

template <typename F>
Tensor broadcast_apply(std::string_view op, const Tensor& a, const Tensor& b, F f) {
  const Broadcast bc = plan_broadcast(op, a, b);
  Tensor out(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      out[r * bc.cols + c] = f(a[bidx(bc.a, r, c)], b[bidx(bc.b, r, c)]);
    }
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  Tape::Node n;
  n.op = OpKind::add;
  n.inputs = {a.id(), b.id()};
  n.value = broadcast_apply("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  return a.tape()->push(std::move(n));
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  Tape::Node n;
  n.op = OpKind::sub;
  n.inputs = {a.id(), b.id()};
  n.value = broadcast_apply("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  return a.tape()->push(std::move(n));
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  Tape::Node n;
  n.op = OpKind::mul;
  n.inputs = {a.id(), b.id()};
  n.value = broadcast_apply("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  return a.tape()->push(std::move(n));
}

Var affine(Var x, double scale, double shift) {
  Tape& t = tape_of("affine", x);
  Tensor v = x.value();
  for (double& e : v.storage()) e = scale * e + shift;
  Tape::Node n;
  n.op = OpKind::affine;
  n.inputs = {x.id()};
  n.a = scale;
  n.b = shift;
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = tape_of("concat", parts[0]);
  const Tensor& first = parts[0].value();
  const std::size_t rows = first.rank() == 0 ? 1 : first.rows();
  std::size_t total = 0;
  for (Var p : parts) {
    require_same_tape("concat", parts[0], p);
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || v.rows() != rows ||
        !std::equal(v.shape().begin(), v.shape().end() - (v.rank() ? 1 : 0), first.shape().begin())) {
      throw ShapeError("concat: shape " + shape_str(v.shape()) + " incompatible with " + shape_str(first.shape()));
    }
    total += v.cols();
  }
  Shape out = first.shape();
  if (out.empty()) out = Shape{total};
  else out.back() = total;
  Tensor value(out);
  std::size_t off = 0;
  Tape::Node n;
  n.op = OpKind::concat;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().data() + r * w, w, value.data().data() + r * total + off);
    }
    off += w;
    n.inputs.push_back(p.id());
  }
  n.value = std::move(value);
  return t.push(std::move(n));
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("stack: no inputs");
  Tape& t = tape_of("stack", parts[0]);
  const Shape& s0 = parts[0].value().shape();
  Shape out{parts.size()};
  out.insert(out.end(), s0.begin(), s0.end());
  Tensor value(out);
  const std::size_t each = shape_numel(s0);
  Tape::Node n;
  n.op = OpKind::stack;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    require_same_tape("stack", parts[0], parts[k]);
    const Tensor& v = parts[k].value();
    if (v.shape() != s0) {
      throw ShapeError("stack: shape " + shape_str(v.shape()) + " differs from " + shape_str(s0));
    }
    std::copy(v.data().begin(), v.data().end(), value.data().begin() + static_cast<std::ptrdiff_t>(k * each));
    n.inputs.push_back(parts[k].id());
  }
  n.value = std::move(value);
  return t.push(std::move(n));
}

Var stack(std::initializer_list<Var> parts) { return stack(std::span<const Var>(parts.begin(), parts.size())); }

Var push_unary(OpKind op, Var x, Tensor value) {
  Tape& t = tape_of(op_name(op), x);
  Tape::Node n;
  n.op = op;
  n.inputs = {x.id()};
  n.value = std::move(value);
  return t.push(std::move(n));
}

namespace {

template <typename F>
Var unary(OpKind op, Var x, F f) {
  Tensor v = x.value();
  for (double& e : v.storage()) e = f(e);
  return push_unary(op, x, std::move(v));
}

}  // namespace

Var sigmoid(Var x) {
  return unary(OpKind::sigmoid, x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Var tanh(Var x) { return unary(OpKind::tanh, x, [](double v) { return std::tanh(v); }); }

Var relu(Var x) { return unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; }); }

Var softmax(Var x) {
  Tape& t = tape_of("softmax", x);
  Tensor v = x.value();
  if (v.numel() == 0) throw ShapeError("softmax: empty input");
  const std::size_t cols = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double* row = v.data().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  check_finite("softmax", v);
  Tape::Node n;
  n.op = OpKind::softmax;
  n.inputs = {x.id()};
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var log(Var x) {
  for (double e : x.value().data()) {
    if (!(e > 0.0)) throw NumericalError("log: non-positive input " + std::to_string(e));
  }
  return unary(OpKind::log, x, [](double v) { return std::log(v); });
}

Var sum(Var x) {
  Tape& t = tape_of("sum", x);
  double s = 0.0;
  for (double e : x.value().data()) s += e;
  Tape::Node n;
  n.op = OpKind::sum;
  n.inputs = {x.id()};
  n.value = Tensor::scalar(s);
  return t.push(std::move(n));
}

Var mean(Var x) {
  Tape& t = tape_of("mean", x);
  const Tensor& xv = x.value();
  if (xv.numel() == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double e : xv.data()) s += e;
  Tape::Node n;
  n.op = OpKind::mean;
  n.inputs = {x.id()};
  n.value = Tensor::scalar(s / static_cast<double>(xv.numel()));
  return t.push(std::move(n));
}

Var sum_last(Var x) {
  Tape& t = tape_of("sum_last", x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("sum_last: scalar input");
  Shape out(xv.shape().begin(), xv.shape().end() - 1);
  Tensor v(out);
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c];
    v[r] = s;
  }
  Tape::Node n;
  n.op = OpKind::sum_last;
  n.inputs = {x.id()};
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var max_last(Var x) {
  Tape& t = tape_of("max_last", x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || xv.cols() == 0) throw ShapeError("max_last: empty last axis");
  Shape out(xv.shape().begin(), xv.shape().end() - 1);
  Tensor v(out);
  Tape::Node n;
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const double* row = xv.data().data() + r * cols;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    v[r] = row[best];
    n.index.push_back(best);
  }
  n.op = OpKind::max_last;
  n.inputs = {x.id()};
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var l2_normalize(Var x) {
  Tape& t = tape_of("l2_normalize", x);
  Tensor v = x.value();
  if (v.rank() == 0) throw ShapeError("l2_normalize: scalar input");
  Tape::Node n;
  const std::size_t cols = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double* row = v.data().data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += row[c] * row[c];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericalError("l2_normalize: row " + std::to_string(r) + " has zero or non-finite norm");
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= norm;
    n.aux.push_back(norm);
  }
  n.op = OpKind::l2_normalize;
  n.inputs = {x.id()};
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var scatter_add(Var src, std::span<const std::size_t> ids, std::size_t width) {
  Tape& t = tape_of("scatter_add", src);
  const Tensor& sv = src.value();
  if (sv.rank() == 0 || sv.rank() > 2) throw ShapeError("scatter_add: source must have rank 1 or 2");
  if (ids.size() != sv.numel()) {
    throw ShapeError("scatter_add: " + std::to_string(ids.size()) + " ids for source of shape " +
                     shape_str(sv.shape()));
  }
  Shape out = sv.rank() == 1 ? Shape{width} : Shape{sv.dim(0), width};
  Tensor v(out);
  const std::size_t len = sv.cols();
  for (std::size_t r = 0; r < sv.rows(); ++r) {
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t id = ids[r * len + j];
      if (id >= width) {
        throw std::out_of_range("scatter_add: id " + std::to_string(id) + " >= width " + std::to_string(width));
      }
      v[r * width + id] += sv[r * len + j];
    }
  }
  Tape::Node n;
  n.op = OpKind::scatter_add;
  n.inputs = {src.id()};
  n.index.assign(ids.begin(), ids.end());
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var masked_fill(Var x, std::span<const std::uint8_t> keep, double fill) {
  Tape& t = tape_of("masked_fill", x);
  Tensor v = x.value();
  if (keep.size() != v.numel() && keep.size() != v.cols()) {
    throw ShapeError("masked_fill: mask of length " + std::to_string(keep.size()) + " for shape " +
                     shape_str(v.shape()));
  }
  if (keep.empty()) throw ShapeError("masked_fill: empty mask");
  for (std::size_t i = 0; i < v.numel(); ++i) {
    if (!keep[i % keep.size()]) v[i] = fill;
  }
  Tape::Node n;
  n.op = OpKind::masked_fill;
  n.inputs = {x.id()};
  n.mask.assign(keep.begin(), keep.end());
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var gather(Var x, std::span<const std::size_t> ids) {
  Tape& t = tape_of("gather", x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("gather: scalar input");
  const std::size_t lead = xv.dim(0);
  const std::size_t width = lead == 0 ? 0 : xv.numel() / lead;
  Shape out = xv.shape();
  out[0] = ids.size();
  Tensor v(out);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= lead) {
      throw std::out_of_range("gather: index " + std::to_string(ids[i]) + " out of range for " +
                              std::to_string(lead) + " rows");
    }
    std::copy_n(xv.data().data() + ids[i] * width, width, v.data().data() + i * width);
  }
  Tape::Node n;
  n.op = OpKind::gather;
  n.inputs = {x.id()};
  n.index.assign(ids.begin(), ids.end());
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var slice_last(Var x, std::size_t begin, std::size_t len) {
  Tape& t = tape_of("slice_last", x);
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || begin + len > xv.cols()) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                     ") out of bounds for " + shape_str(xv.shape()));
  }
  Shape out = xv.shape();
  out.back() = len;
  Tensor v(out);
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    std::copy_n(xv.data().data() + r * cols + begin, len, v.data().data() + r * len);
  }
  Tape::Node n;
  n.op = OpKind::slice_last;
  n.inputs = {x.id()};
  n.offset = begin;
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var transpose(Var x) {
  Tape& t = tape_of("transpose", x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("transpose: rank-2 input required, got " + shape_str(xv.shape()));
  const std::size_t rows = xv.dim(0);
  const std::size_t cols = xv.dim(1);
  Tensor v(Shape{cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) v[c * rows + r] = xv[r * cols + c];
  }
  Tape::Node n;
  n.op = OpKind::transpose;
  n.inputs = {x.id()};
  n.value = std::move(v);
  return t.push(std::move(n));
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of("reshape", x);
  Tape::Node n;
  n.op = OpKind::reshape;
  n.inputs = {x.id()};
  n.value = x.value().reshaped(std::move(shape));
  return t.push(std::move(n));
}

Var clamp_min(Var x, double floor) {
  Tape& t = tape_of("clamp_min", x);
  Tensor v = x.value();
  for (double& e : v.storage()) e = std::max(e, floor);
  Tape::Node n;
  n.op = OpKind::clamp_min;
  n.inputs = {x.id()};
  n.a = floor;
  n.value = std::move(v);
  return t.push(std::move(n));
}

}  // namespace rcg
