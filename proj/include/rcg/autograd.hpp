#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcg/tensor.hpp"

namespace rcg {

/// A named learnable tensor with its gradient slot.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape()); }
};

/// Owns parameters at stable addresses; layers keep raw pointers into it.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Tensor init);
  Parameter* find(std::string_view name) const;
  Parameter& get(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::vector<Parameter*> list() const;
  void zero_grads();
  std::size_t total_elements() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  matmul,
  add,
  sub,
  mul,
  affine,
  concat,
  stack,
  sigmoid,
  tanh,
  relu,
  softmax,
  log,
  sum,
  sum_last,
  mean,
  max_last,
  l2_normalize,
  scatter_add,
  masked_fill,
  gather,
  slice_last,
  transpose,
  reshape,
  clamp_min,
  custom,
};

std::string_view op_name(OpKind op);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode recording of a computation.
///
/// Nodes are appended in evaluation order, so the node array is already a
/// topological order and backward is a single reverse sweep.
class Tape {
 public:
  /// Accumulates the gradient of one custom node into its inputs' gradients.
  using BackwardFn =
      std::function<void(const Tensor& out_grad, std::span<const Tensor* const> inputs, std::span<Tensor* const> in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var param(Parameter& p);

  /// Node with caller-supplied forward value and gradient rule.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target with respect to v. Zeros if
  /// unreached or if no parameter feeds v.
  Tensor grad(Var v) const;

  /// Accumulates d(loss)/d(parameter) into Parameter::grad for every
  /// parameter leaf. Throws ShapeError if loss is not a scalar.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    OpKind op = OpKind::constant;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Parameter* param = nullptr;
    double a = 0.0;
    double b = 0.0;
    std::size_t offset = 0;
    std::vector<std::size_t> index;
    std::vector<std::uint8_t> mask;
    std::vector<double> aux;
    std::shared_ptr<BackwardFn> custom;
    bool needs_grad = false;  // a parameter is upstream
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  void backward_node(std::uint32_t id, const Tensor& g);
  Tensor& grad_slot(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<Parameter*, std::uint32_t>> param_nodes_;

  friend Var matmul(Var a, Var b);
  friend Var add(Var a, Var b);
  friend Var sub(Var a, Var b);
  friend Var mul(Var a, Var b);
  friend Var affine(Var x, double scale, double shift);
  friend Var concat(std::span<const Var> parts);
  friend Var stack(std::span<const Var> parts);
  friend Var sigmoid(Var x);
  friend Var tanh(Var x);
  friend Var relu(Var x);
  friend Var softmax(Var x);
  friend Var log(Var x);
  friend Var sum(Var x);
  friend Var sum_last(Var x);
  friend Var mean(Var x);
  friend Var max_last(Var x);
  friend Var l2_normalize(Var x);
  friend Var scatter_add(Var src, std::span<const std::size_t> ids, std::size_t width);
  friend Var masked_fill(Var x, std::span<const std::uint8_t> keep, double fill);
  friend Var gather(Var x, std::span<const std::size_t> ids);
  friend Var slice_last(Var x, std::size_t begin, std::size_t len);
  friend Var transpose(Var x);
  friend Var reshape(Var x, Shape shape);
  friend Var clamp_min(Var x, double floor);
  friend Var push_unary(OpKind op, Var x, Tensor value);
};

// Matrix product. Rank-1 left operands act as row vectors and rank-1 right
// operands as column vectors; the corresponding output axis is dropped.
Var matmul(Var a, Var b);

// Elementwise with rank<=2 broadcasting over size-1 rows/cols.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);

Var concat(std::span<const Var> parts);  // along last axis
Var concat(std::initializer_list<Var> parts);
Var stack(std::span<const Var> parts);  // new leading axis
Var stack(std::initializer_list<Var> parts);

Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var softmax(Var x);  // last axis, max-shifted
Var log(Var x);      // NumericalError on non-positive input
Var sum(Var x);
Var sum_last(Var x);
Var mean(Var x);
Var max_last(Var x);
Var l2_normalize(Var x);  // last axis; NumericalError on a zero row

// out[r, ids[r*L + j]] += src[r, j]; duplicate ids accumulate.
Var scatter_add(Var src, std::span<const std::size_t> ids, std::size_t width);
// Positions where keep == 0 take `fill`. keep has numel() or cols() entries.
Var masked_fill(Var x, std::span<const std::uint8_t> keep, double fill);
// Rows of x along the leading axis (elements, for rank 1).
Var gather(Var x, std::span<const std::size_t> ids);
Var slice_last(Var x, std::size_t begin, std::size_t len);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
Var clamp_min(Var x, double floor);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return affine(x, s, 0.0); }
inline Var operator-(Var x) { return affine(x, -1.0, 0.0); }

}  // namespace rcg
