#include "simil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "simil/errors.hpp"

namespace simil::ad {

namespace {

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_string());
  }
}

Graph& common_graph(std::span<const Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("operation on an empty Var");
    if (g == nullptr) {
      g = &v.graph();
    } else if (g != &v.graph()) {
      throw ContractError("operands belong to different graphs");
    }
  }
  return *g;
}

// A set of 1-D lines through a tensor along one axis.
struct Lines {
  std::size_t count;
  std::size_t length;
  std::size_t stride;
  std::size_t outer_stride;  // start offset step between consecutive lines
};

Lines lines_along(const Tensor& t, std::size_t axis, const char* op) {
  if (t.rank() == 1 && axis == 0) return {1, t.size(), 1, 0};
  if (t.rank() == 2) {
    const std::size_t r = t.shape()[0];
    const std::size_t c = t.shape()[1];
    if (axis == 0) return {c, r, c, 1};
    if (axis == 1) return {r, c, 1, c};
  }
  throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                   t.shape_string());
}

Tensor::Shape reduced_shape(const Tensor& t, std::size_t axis) {
  if (t.rank() == 1) return {};
  if (axis == 0) return {1, t.shape()[1]};
  return {t.shape()[0], 1};
}

void dense_matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

Tensor transposed(const Tensor& t) {
  const std::size_t r = t.rows();
  const std::size_t c = t.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

template <typename F, typename D>
Var unary(Var x, OpKind kind, F f, D df) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.graph().record(kind, {x}, std::move(out), [df](const BackwardContext& ctx) {
    Tensor* g = ctx.input_grads[0];
    if (g == nullptr) return;
    const Tensor& in = *ctx.inputs[0];
    for (std::size_t i = 0; i < in.size(); ++i)
      (*g)[i] += ctx.upstream[i] * df(in[i], ctx.output[i]);
  });
}

enum class Binary { Add, Sub, Mul, Div };

Var binary(Var a, Var b, Binary which) {
  const Var pair[] = {a, b};
  Graph& g = common_graph(pair);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  Tensor::Shape out_shape;
  if (ta.same_shape(tb)) {
    out_shape = ta.shape();
  } else if (ta.size() == 1) {
    out_shape = tb.shape();
  } else if (tb.size() == 1) {
    out_shape = ta.shape();
  } else {
    throw ShapeError("elementwise op: shape mismatch " + ta.shape_string() + " vs " +
                     tb.shape_string());
  }
  Tensor out(out_shape);
  const bool a_scalar = ta.size() == 1 && out.size() != 1;
  const bool b_scalar = tb.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = ta[a_scalar ? 0 : i];
    const double y = tb[b_scalar ? 0 : i];
    switch (which) {
      case Binary::Add: out[i] = x + y; break;
      case Binary::Sub: out[i] = x - y; break;
      case Binary::Mul: out[i] = x * y; break;
      case Binary::Div: out[i] = x / y; break;
    }
  }
  if (which == Binary::Div) {
    for (double v : tb.data()) {
      if (v == 0.0) throw DomainError("division by zero");
    }
  }
  const OpKind kind = which == Binary::Add   ? OpKind::Add
                      : which == Binary::Sub ? OpKind::Sub
                      : which == Binary::Mul ? OpKind::Mul
                                             : OpKind::Div;
  return g.record(kind, {a, b}, std::move(out),
                  [which, a_scalar, b_scalar](const BackwardContext& ctx) {
                    const Tensor& x = *ctx.inputs[0];
                    const Tensor& y = *ctx.inputs[1];
                    Tensor* gx = ctx.input_grads[0];
                    Tensor* gy = ctx.input_grads[1];
                    for (std::size_t i = 0; i < ctx.upstream.size(); ++i) {
                      const double u = ctx.upstream[i];
                      const std::size_t ix = a_scalar ? 0 : i;
                      const std::size_t iy = b_scalar ? 0 : i;
                      switch (which) {
                        case Binary::Add:
                          if (gx) (*gx)[ix] += u;
                          if (gy) (*gy)[iy] += u;
                          break;
                        case Binary::Sub:
                          if (gx) (*gx)[ix] += u;
                          if (gy) (*gy)[iy] -= u;
                          break;
                        case Binary::Mul:
                          if (gx) (*gx)[ix] += u * y[iy];
                          if (gy) (*gy)[iy] += u * x[ix];
                          break;
                        case Binary::Div:
                          if (gx) (*gx)[ix] += u / y[iy];
                          if (gy) (*gy)[iy] -= u * x[ix] / (y[iy] * y[iy]);
                          break;
                      }
                    }
                  });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string());
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return 1;
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
  return data_[0];
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::GatherCols: return "gather_cols";
    case OpKind::Reshape: return "reshape";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Clamp: return "clamp";
    case OpKind::StopGradient: return "stop_gradient";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------------- Var / Graph

const Tensor& Var::value() const { return graph_->value(id_); }
Tensor Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward) {
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (const Var& p : parents) {
    if (&p.graph() != this) throw ContractError("parent belongs to a different graph");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (kind == OpKind::StopGradient) node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::ensure_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Graph::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.has_grad) return Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw ContractError("backward: root belongs to a different graph");
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + root.value().shape_string());
  }
  if (backward_done_) throw ContractError("backward called twice without reset()");
  backward_done_ = true;
  ensure_grad(root.id())[0] = 1.0;

  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.requires_grad || !node.backward) continue;
    BackwardContext ctx{node.grad, node.value, {}, {}};
    ctx.inputs.reserve(node.parents.size());
    ctx.input_grads.reserve(node.parents.size());
    for (std::size_t p : node.parents) {
      ctx.inputs.push_back(&nodes_[p].value);
      ctx.input_grads.push_back(nodes_[p].requires_grad ? &ensure_grad(p) : nullptr);
    }
    node.backward(ctx);
  }
}

void Graph::reset() {
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  backward_done_ = false;
}

// ---------------------------------------------------------------- ops

Var add(Var a, Var b) { return binary(a, b, Binary::Add); }
Var sub(Var a, Var b) { return binary(a, b, Binary::Sub); }
Var mul(Var a, Var b) { return binary(a, b, Binary::Mul); }
Var div(Var a, Var b) { return binary(a, b, Binary::Div); }

Var matmul(Var a, Var b) {
  const Var pair[] = {a, b};
  Graph& g = common_graph(pair);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require_rank2(ta, "matmul");
  require_rank2(tb, "matmul");
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  if (tb.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + ta.shape_string() + " x " +
                     tb.shape_string());
  }
  Tensor out({m, n});
  dense_matmul(ta.data().data(), tb.data().data(), out.data().data(), m, k, n, false);
  return g.record(OpKind::MatMul, {a, b}, std::move(out), [m, k, n](const BackwardContext& ctx) {
    const Tensor& A = *ctx.inputs[0];
    const Tensor& B = *ctx.inputs[1];
    if (Tensor* gA = ctx.input_grads[0]) {
      const Tensor Bt = transposed(B);
      dense_matmul(ctx.upstream.data().data(), Bt.data().data(), gA->data().data(), m, n, k, true);
    }
    if (Tensor* gB = ctx.input_grads[1]) {
      const Tensor At = transposed(A);
      dense_matmul(At.data().data(), ctx.upstream.data().data(), gB->data().data(), k, m, n, true);
    }
  });
}

Var transpose(Var x) {
  require_rank2(x.value(), "transpose");
  return x.graph().record(OpKind::Transpose, {x}, transposed(x.value()),
                          [](const BackwardContext& ctx) {
                            if (Tensor* g = ctx.input_grads[0]) {
                              const Tensor t = transposed(ctx.upstream);
                              for (std::size_t i = 0; i < t.size(); ++i) (*g)[i] += t[i];
                            }
                          });
}

Var exp(Var x) {
  return unary(
      x, OpKind::Exp, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      x, OpKind::Log, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Var tanh(Var x) {
  return unary(
      x, OpKind::Tanh, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      x, OpKind::Sigmoid,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary(
      x, OpKind::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  return unary(
      x, OpKind::Gelu,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary(
      x, OpKind::Sqrt, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var x) {
  return unary(
      x, OpKind::Square, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var scale(Var x, double factor) {
  return unary(
      x, OpKind::Scale, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Var shift(Var x, double offset) {
  return unary(
      x, OpKind::Shift, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, OpKind::Clamp, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var stop_gradient(Var x) {
  return x.graph().record(OpKind::StopGradient, {x}, x.value(), BackwardFn{});
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& in = x.value();
  const Lines L = lines_along(in, axis, "softmax");
  Tensor out(in.shape());
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t base = l * L.outer_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, in[base + i * L.stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) {
      const double e = std::exp(in[base + i * L.stride] - mx);
      out[base + i * L.stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < L.length; ++i) out[base + i * L.stride] /= total;
  }
  return x.graph().record(OpKind::Softmax, {x}, std::move(out), [L](const BackwardContext& ctx) {
    Tensor* g = ctx.input_grads[0];
    if (g == nullptr) return;
    const Tensor& y = ctx.output;
    const Tensor& u = ctx.upstream;
    for (std::size_t l = 0; l < L.count; ++l) {
      const std::size_t base = l * L.outer_stride;
      double dot = 0.0;
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = base + i * L.stride;
        dot += u[k] * y[k];
      }
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = base + i * L.stride;
        (*g)[k] += y[k] * (u[k] - dot);
      }
    }
  });
}

namespace {

Var reduce_axis(Var x, std::size_t axis, bool average) {
  const Tensor& in = x.value();
  const Lines L = lines_along(in, axis, average ? "mean" : "sum");
  Tensor out(reduced_shape(in, axis));
  const double factor = average ? 1.0 / static_cast<double>(L.length) : 1.0;
  for (std::size_t l = 0; l < L.count; ++l) {
    const std::size_t base = l * L.outer_stride;
    double s = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) s += in[base + i * L.stride];
    out[l] = s * factor;
  }
  return x.graph().record(average ? OpKind::Mean : OpKind::Sum, {x}, std::move(out),
                          [L, factor](const BackwardContext& ctx) {
                            Tensor* g = ctx.input_grads[0];
                            if (g == nullptr) return;
                            for (std::size_t l = 0; l < L.count; ++l) {
                              const std::size_t base = l * L.outer_stride;
                              const double u = ctx.upstream[l] * factor;
                              for (std::size_t i = 0; i < L.length; ++i) (*g)[base + i * L.stride] += u;
                            }
                          });
}

Var reduce_all(Var x, bool average) {
  const Tensor& in = x.value();
  if (in.size() == 0) throw ShapeError("reduction over an empty tensor");
  double s = 0.0;
  for (double v : in.data()) s += v;
  const double factor = average ? 1.0 / static_cast<double>(in.size()) : 1.0;
  return x.graph().record(average ? OpKind::Mean : OpKind::Sum, {x}, Tensor::scalar(s * factor),
                          [factor](const BackwardContext& ctx) {
                            Tensor* g = ctx.input_grads[0];
                            if (g == nullptr) return;
                            const double u = ctx.upstream[0] * factor;
                            for (double& v : g->data()) v += u;
                          });
}

}  // namespace

Var sum(Var x, std::size_t axis) { return reduce_axis(x, axis, false); }
Var sum(Var x) { return reduce_all(x, false); }
Var mean(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }
Var mean(Var x) { return reduce_all(x, true); }

Var concat(Var a, Var b, std::size_t axis) {
  const Var pair[] = {a, b};
  Graph& g = common_graph(pair);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require_rank2(ta, "concat");
  require_rank2(tb, "concat");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  if (axis == 0 && ta.cols() != tb.cols()) throw ShapeError("concat rows: column counts differ");
  if (axis == 1 && ta.rows() != tb.rows()) throw ShapeError("concat cols: row counts differ");
  const std::size_t r = axis == 0 ? ta.rows() + tb.rows() : ta.rows();
  const std::size_t c = axis == 0 ? ta.cols() : ta.cols() + tb.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (axis == 0) {
        out.at(i, j) = i < ta.rows() ? ta.at(i, j) : tb.at(i - ta.rows(), j);
      } else {
        out.at(i, j) = j < ta.cols() ? ta.at(i, j) : tb.at(i, j - ta.cols());
      }
    }
  }
  return g.record(OpKind::Concat, {a, b}, std::move(out), [axis](const BackwardContext& ctx) {
    const Tensor& A = *ctx.inputs[0];
    const Tensor& u = ctx.upstream;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      for (std::size_t j = 0; j < u.cols(); ++j) {
        const bool in_a = axis == 0 ? i < A.rows() : j < A.cols();
        if (in_a) {
          if (Tensor* ga = ctx.input_grads[0]) ga->at(i, j) += u.at(i, j);
        } else if (Tensor* gb = ctx.input_grads[1]) {
          if (axis == 0) {
            gb->at(i - A.rows(), j) += u.at(i, j);
          } else {
            gb->at(i, j - A.cols()) += u.at(i, j);
          }
        }
      }
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& in = x.value();
  if (in.rank() == 0 || in.rank() > 2) throw ShapeError("gather_rows: rank must be 1 or 2");
  const std::size_t c = in.cols();
  for (std::size_t r : rows) {
    if (r >= in.rows()) throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range");
  }
  Tensor out(in.rank() == 2 ? Tensor::Shape{rows.size(), c} : Tensor::Shape{rows.size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[rows[i] * c + j];
  return x.graph().record(OpKind::GatherRows, {x}, std::move(out),
                          [rows = std::move(rows), c](const BackwardContext& ctx) {
                            Tensor* g = ctx.input_grads[0];
                            if (g == nullptr) return;
                            for (std::size_t i = 0; i < rows.size(); ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                (*g)[rows[i] * c + j] += ctx.upstream[i * c + j];
                          });
}

Var gather_cols(Var x, std::vector<std::size_t> cols) {
  const Tensor& in = x.value();
  require_rank2(in, "gather_cols");
  const std::size_t r = in.rows();
  for (std::size_t c : cols) {
    if (c >= in.cols()) throw ShapeError("gather_cols: index " + std::to_string(c) + " out of range");
  }
  Tensor out({r, cols.size()});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out.at(i, j) = in.at(i, cols[j]);
  return x.graph().record(OpKind::GatherCols, {x}, std::move(out),
                          [cols = std::move(cols)](const BackwardContext& ctx) {
                            Tensor* g = ctx.input_grads[0];
                            if (g == nullptr) return;
                            for (std::size_t i = 0; i < ctx.upstream.rows(); ++i)
                              for (std::size_t j = 0; j < cols.size(); ++j)
                                g->at(i, cols[j]) += ctx.upstream.at(i, j);
                          });
}

Var reshape(Var x, Tensor::Shape shape) {
  const Tensor& in = x.value();
  if (shape_product(shape) != in.size()) {
    throw ShapeError("reshape: cannot view " + in.shape_string() + " with " +
                     std::to_string(shape_product(shape)) + " elements");
  }
  Tensor out(std::move(shape), in.values());
  return x.graph().record(OpKind::Reshape, {x}, std::move(out), [](const BackwardContext& ctx) {
    if (Tensor* g = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.upstream[i];
    }
  });
}

Var broadcast_to(Var x, Tensor::Shape shape) {
  const Tensor& in = x.value();
  require_rank2(in, "broadcast_to");
  if (shape.size() != 2) throw ShapeError("broadcast_to: target must be rank 2");
  const std::size_t r0 = in.rows(), c0 = in.cols();
  if ((r0 != 1 && r0 != shape[0]) || (c0 != 1 && c0 != shape[1])) {
    throw ShapeError("broadcast_to: cannot expand " + in.shape_string());
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < shape[0]; ++i)
    for (std::size_t j = 0; j < shape[1]; ++j)
      out.at(i, j) = in.at(r0 == 1 ? 0 : i, c0 == 1 ? 0 : j);
  return x.graph().record(OpKind::Broadcast, {x}, std::move(out), [r0, c0](const BackwardContext& ctx) {
    Tensor* g = ctx.input_grads[0];
    if (g == nullptr) return;
    const Tensor& u = ctx.upstream;
    for (std::size_t i = 0; i < u.rows(); ++i)
      for (std::size_t j = 0; j < u.cols(); ++j)
        g->at(r0 == 1 ? 0 : i, c0 == 1 ? 0 : j) += u.at(i, j);
  });
}

Var custom(const CustomGrad& op, std::vector<Var> inputs) {
  Graph& g = common_graph(inputs);
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) values.push_back(&v.value());
  Tensor out = op.forward(values);
  return g.record(OpKind::Custom, std::move(inputs), std::move(out), op.backward);
}

// ---------------------------------------------------------------- grad_check

GradCheckReport grad_check(const ScalarBuilder& build, const std::vector<Tensor>& params,
                           double step, double tol, double abs_floor, Stencil stencil) {
  GradCheckReport report;
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& t : values) vars.push_back(g.constant(t));
    return build(g, vars).item();
  };

  std::vector<Tensor> analytic;
  try {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : params) vars.push_back(g.parameter(t));
    Var root = build(g, vars);
    g.backward(root);
    for (const Var& v : vars) analytic.push_back(v.grad());
  } catch (const std::exception& e) {
    report.failure = std::string("analytic pass failed: ") + e.what();
    return report;
  }

  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = probe[p][i];
      double numeric = 0.0;
      try {
        auto at = [&](double offset) {
          probe[p][i] = original + offset;
          return evaluate(probe);
        };
        if (stencil == Stencil::Central3) {
          numeric = (at(step) - at(-step)) / (2.0 * step);
        } else {
          numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
        }
      } catch (const std::exception& e) {
        probe[p][i] = original;
        report.failure = std::string("numeric pass failed: ") + e.what();
        report.passed = false;
        return report;
      }
      probe[p][i] = original;
      ++report.coordinates;
      const double a = analytic[p][i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.failure = "non-finite gradient";
        report.max_relative_error = std::numeric_limits<double>::infinity();
        report.worst_param = p;
        report.worst_index = i;
        continue;
      }
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (rel_err > report.max_relative_error) {
        report.max_relative_error = rel_err;
        report.worst_param = p;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.failure.empty() && report.max_relative_error <= tol;
  return report;
}

}  // namespace simil::ad
