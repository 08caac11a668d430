#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every operation appends a node whose parents have
// smaller ids, so reverse id order is a valid topological order for the
// backward sweep. Graphs are cheap and meant to be rebuilt for each
// training step. Broadcasting is limited to scalar-with-tensor; anything
// else needs an explicit broadcast_to().

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace simil::ad {

class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Rank-2 view helpers; rank-1 tensors are treated as a single column.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Transpose,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Relu,
  Gelu,
  Sqrt,
  Square,
  Scale,
  Shift,
  Softmax,
  Sum,
  Mean,
  Concat,
  GatherRows,
  GatherCols,
  Reshape,
  Broadcast,
  Clamp,
  StopGradient,
  Custom,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  Tensor grad() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Everything a backward rule needs. input_grads[i] is null when parent i does
// not require a gradient; rules must accumulate (+=) into non-null entries.
struct BackwardContext {
  const Tensor& upstream;
  const Tensor& output;
  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;
using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;

// User-supplied differentiable operation (e.g. an estimator-based gradient).
struct CustomGrad {
  std::string name;
  ForwardFn forward;
  BackwardFn backward;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // Appends a node. Parents must belong to this graph.
  Var record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward);

  // Reverse sweep from a scalar root. A second call without reset() throws.
  void backward(Var root);
  void reset();

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  // Zeros when nothing flowed into the node.
  Tensor grad(std::size_t id) const;
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Tensor& ensure_grad(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Elementwise; either operand may be a single-element tensor.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);  // DomainError on a zero divisor

Var matmul(Var a, Var b);
Var transpose(Var x);

Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var gelu(Var x);
Var sqrt(Var x);
Var square(Var x);
Var scale(Var x, double factor);
Var shift(Var x, double offset);
Var clamp(Var x, double lo, double hi);
Var stop_gradient(Var x);

// Axis reductions keep rank for rank-2 inputs ({1,c} or {r,1}); reducing a
// rank-1 tensor yields a scalar.
Var softmax(Var x, std::size_t axis);
Var sum(Var x, std::size_t axis);
Var sum(Var x);
Var mean(Var x, std::size_t axis);
Var mean(Var x);

Var concat(Var a, Var b, std::size_t axis);
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var gather_cols(Var x, std::vector<std::size_t> cols);
Var reshape(Var x, Tensor::Shape shape);
// Expands singleton dimensions of a rank-2 tensor to the target shape.
Var broadcast_to(Var x, Tensor::Shape shape);

Var custom(const CustomGrad& op, std::vector<Var> inputs);

// Central-difference gradient check of a scalar function of parameters.
struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  std::string failure;  // set when evaluation threw or produced non-finite values
};

using ScalarBuilder = std::function<Var(Graph&, std::span<const Var>)>;

enum class Stencil { Central3, Central5 };

// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const ScalarBuilder& build, const std::vector<Tensor>& params,
                           double step, double tol, double abs_floor = 1e-6,
                           Stencil stencil = Stencil::Central3);

}  // namespace simil::ad
