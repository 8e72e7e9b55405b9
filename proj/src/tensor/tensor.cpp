#include "selfeq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace selfeq::tensor {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
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
    case OpKind::Relu: return "relu";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::Expand: return "expand";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ScatterRows: return "scatter_rows";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Pad: return "pad";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::CrossEntropy: return "cross_entropy_with_logits";
  }
  return "?";
}

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<float> values) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("constant: shape " + shape_str(shape) + " holds " +
                     std::to_string(element_count(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<float>>(std::move(values));
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
  const std::size_t n = element_count(shape);
  return constant(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::scalar(float value) { return constant({}, {value}); }

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

// ---- Tape ---------------------------------------------------------------------

Tensor Tape::record(Node node, Shape shape, std::vector<float> values) {
#ifndef NDEBUG
  for (float v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(op_name(node.kind)) + ": non-finite result");
  }
#endif
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<float>>(std::move(values));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  node.output = t;
  nodes_.push_back(std::move(node));
  return t;
}

Tensor Tape::variable(Shape shape, std::vector<float> values) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("variable: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  Node n;
  n.kind = OpKind::Leaf;
  return record(std::move(n), std::move(shape), std::move(values));
}

Tensor Tape::variable(const Tensor& value) {
  return variable(value.shape(), value.to_vector());
}

namespace {

Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return reshape(sum(g), shape);
}

// Vector-Jacobian products, written in terms of the ops themselves so that
// with create_graph the backward pass lands on the tape as ordinary nodes.
std::vector<Tensor> vjp(const Node& n, const Tensor& g, const std::vector<char>& need,
                        bool create_graph) {
  auto in = [&](std::size_t k) { return create_graph ? n.inputs[k] : n.inputs[k].detached(); };
  auto out = [&]() { return create_graph ? n.output : n.output.detached(); };
  std::vector<Tensor> r(n.inputs.size());
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (need[0]) r[0] = reduce_to(g, n.inputs[0].shape());
      if (need[1]) r[1] = reduce_to(g, n.inputs[1].shape());
      break;
    case OpKind::Sub:
      if (need[0]) r[0] = reduce_to(g, n.inputs[0].shape());
      if (need[1]) r[1] = reduce_to(scalar_mul(g, -1.0f), n.inputs[1].shape());
      break;
    case OpKind::Mul:
      if (need[0]) r[0] = reduce_to(mul(g, in(1)), n.inputs[0].shape());
      if (need[1]) r[1] = reduce_to(mul(g, in(0)), n.inputs[1].shape());
      break;
    case OpKind::Div: {
      const Tensor b = in(1);
      if (need[0]) r[0] = reduce_to(div(g, b), n.inputs[0].shape());
      if (need[1]) {
        const Tensor num = mul(g, in(0));
        r[1] = reduce_to(scalar_mul(div(num, mul(b, b)), -1.0f), n.inputs[1].shape());
      }
      break;
    }
    case OpKind::MatMul:
      if (need[0]) r[0] = matmul(g, transpose(in(1)));
      if (need[1]) r[1] = matmul(transpose(in(0)), g);
      break;
    case OpKind::Relu:
    case OpKind::ClampMin: {
      const Tensor& x = n.inputs[0];
      const float floor = n.kind == OpKind::Relu ? 0.0f : n.scalar;
      std::vector<float> m(x.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = x[i] > floor ? 1.0f : 0.0f;
      r[0] = mul(g, Tensor::constant(x.shape(), std::move(m)));
      break;
    }
    case OpKind::RowSoftmax: {
      const Tensor y = out();
      const Tensor dot = sum_rows(mul(g, y));
      r[0] = mul(y, sub(g, expand(dot, y.shape())));
      break;
    }
    case OpKind::Exp:
      r[0] = mul(g, out());
      break;
    case OpKind::Log:
      r[0] = div(g, in(0));
      break;
    case OpKind::Square:
      r[0] = mul(g, scalar_mul(in(0), 2.0f));
      break;
    case OpKind::Sqrt: {
      const Tensor y = out();
      std::vector<float> live(y.size()), shift(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) {
        live[i] = y[i] > 0.0f ? 1.0f : 0.0f;
        shift[i] = y[i] > 0.0f ? 0.0f : 1.0f;
      }
      const Tensor denom = add(y, Tensor::constant(y.shape(), std::move(shift)));
      r[0] = mul(div(scalar_mul(g, 0.5f), denom), Tensor::constant(y.shape(), std::move(live)));
      break;
    }
    case OpKind::Sum:
      r[0] = expand(g, n.inputs[0].shape());
      break;
    case OpKind::Mean:
      r[0] = expand(scalar_mul(g, 1.0f / static_cast<float>(n.inputs[0].size())), n.inputs[0].shape());
      break;
    case OpKind::SumRows:
    case OpKind::SumCols:
      r[0] = expand(g, n.inputs[0].shape());
      break;
    case OpKind::Expand: {
      const Tensor& x = n.inputs[0];
      if (x.size() == 1) {
        r[0] = reshape(sum(g), x.shape());
      } else if (x.rows() == 1) {
        r[0] = reshape(sum_cols(g), x.shape());
      } else {
        r[0] = reshape(sum_rows(g), x.shape());
      }
      break;
    }
    case OpKind::GatherRows:
      r[0] = scatter_rows(g, n.indices, n.inputs[0].rows());
      break;
    case OpKind::ScatterRows:
      r[0] = gather_rows(g, n.indices);
      break;
    case OpKind::Concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t extent = n.inputs[k].shape()[n.axis];
        if (need[k]) r[k] = slice(g, n.axis, offset, offset + extent);
        offset += extent;
      }
      break;
    }
    case OpKind::Slice:
      r[0] = pad(g, n.axis, n.begin, n.inputs[0].shape()[n.axis]);
      break;
    case OpKind::Pad:
      r[0] = slice(g, n.axis, n.begin, n.begin + n.inputs[0].shape()[n.axis]);
      break;
    case OpKind::Transpose:
      r[0] = transpose(g);
      break;
    case OpKind::Reshape:
      r[0] = reshape(g, n.inputs[0].shape());
      break;
    case OpKind::ScalarMul:
      r[0] = scalar_mul(g, n.scalar);
      break;
    case OpKind::CrossEntropy: {
      const Tensor& logits = n.inputs[0];
      std::vector<float> onehot(logits.size(), 0.0f);
      for (std::size_t i = 0; i < n.indices.size(); ++i) onehot[i * logits.cols() + n.indices[i]] = 1.0f;
      const Tensor diff = sub(row_softmax(in(0)), Tensor::constant(logits.shape(), std::move(onehot)));
      r[0] = mul(g, scalar_mul(diff, 1.0f / static_cast<float>(logits.rows())));
      break;
    }
  }
  return r;
}

}  // namespace

std::vector<std::optional<Tensor>> Tape::propagate(const Tensor& root, const std::vector<char>* active,
                                                   bool create_graph) {
  if (root.tape() != this) throw std::invalid_argument("backward: root is not recorded on this tape");
  if (root.size() != 1) {
    throw ShapeError("backward: root must be scalar-shaped, got " + shape_str(root.shape()));
  }
  const auto root_id = static_cast<std::size_t>(root.node());
  std::vector<std::optional<Tensor>> grads(root_id + 1);
  grads[root_id] = Tensor::full(root.shape(), 1.0f);

  for (std::size_t i = root_id + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::Leaf) continue;
    std::vector<char> need(n.inputs.size(), 0);
    bool any = false;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const Tensor& x = n.inputs[k];
      if (!x.requires_grad()) continue;
      if (active && !(*active)[static_cast<std::size_t>(x.node())]) continue;
      need[k] = 1;
      any = true;
    }
    if (!any) continue;
    const Tensor g = *grads[i];
    std::vector<Tensor> parts = vjp(n, g, need, create_graph);
    // n may not be touched after vjp only through the stable deque reference.
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!need[k] || !parts[k].defined()) continue;
      const auto j = static_cast<std::size_t>(nodes_[i].inputs[k].node());
      grads[j] = grads[j] ? add(*grads[j], parts[k]) : parts[k];
    }
  }
  return grads;
}

void Tape::backward(const Tensor& root) {
  grads_ = propagate(root, nullptr, false);
}

std::vector<Tensor> Tape::grad(const Tensor& root, const std::vector<Tensor>& wrt, bool create_graph) {
  if (root.tape() != this) throw std::invalid_argument("grad: root is not recorded on this tape");
  const auto root_id = static_cast<std::size_t>(root.node());
  std::vector<char> active(root_id + 1, 0);
  for (const Tensor& w : wrt) {
    if (w.tape() != this) throw std::invalid_argument("grad: target is not recorded on this tape");
    if (static_cast<std::size_t>(w.node()) <= root_id) active[static_cast<std::size_t>(w.node())] = 1;
  }
  for (std::size_t i = 0; i <= root_id; ++i) {
    if (active[i]) continue;
    for (const Tensor& x : nodes_[i].inputs) {
      if (x.tape() == this && active[static_cast<std::size_t>(x.node())]) {
        active[i] = 1;
        break;
      }
    }
  }
  auto grads = propagate(root, &active, create_graph);
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    const auto j = static_cast<std::size_t>(w.node());
    if (j < grads.size() && grads[j]) {
      result.push_back(*grads[j]);
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

std::optional<Tensor> Tape::grad_of(const Tensor& t) const {
  if (t.tape() != this) return std::nullopt;
  const auto j = static_cast<std::size_t>(t.node());
  if (j >= grads_.size()) return std::nullopt;
  return grads_[j];
}

// ---- op plumbing ----------------------------------------------------------------

namespace {

Tape* common_tape(const std::vector<Tensor>& inputs, const char* op) {
  Tape* tape = nullptr;
  for (const Tensor& x : inputs) {
    if (!x.defined()) throw std::invalid_argument(std::string(op) + ": undefined input");
    if (!x.tape()) continue;
    if (tape && tape != x.tape()) throw std::invalid_argument(std::string(op) + ": inputs live on different tapes");
    tape = x.tape();
  }
  return tape;
}

Tensor make(Node node, Shape shape, std::vector<float> values) {
  Tape* tape = common_tape(node.inputs, op_name(node.kind));
  if (!tape) return Tensor::constant(std::move(shape), std::move(values));
  return tape->record(std::move(node), std::move(shape), std::move(values));
}

Node node_of(OpKind kind, std::vector<Tensor> inputs) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  return n;
}

[[noreturn]] void mismatch(OpKind kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

void require_rank2(OpKind kind, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op_name(kind)) + ": expected a rank-2 tensor, got " + shape_str(x.shape()));
  }
}

template <typename F>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, F f, bool scalar_ok) {
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (scalar_ok && a.size() == 1) {
    shape = b.shape();
  } else if (scalar_ok && b.size() == 1) {
    shape = a.shape();
  } else {
    mismatch(kind, a, b);
  }
  const std::size_t n = element_count(shape);
  std::vector<float> out(n);
  const auto da = a.data();
  const auto db = b.data();
  const bool sa = da.size() == 1 && n != 1;
  const bool sb = db.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(da[sa ? 0 : i], db[sb ? 0 : i]);
  return make(node_of(kind, {a, b}), std::move(shape), std::move(out));
}

template <typename F>
Tensor unary(OpKind kind, const Tensor& x, F f) {
  std::vector<float> out(x.size());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return make(node_of(kind, {x}), x.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(OpKind::Add, a, b, [](float x, float y) { return x + y; }, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(OpKind::Sub, a, b, [](float x, float y) { return x - y; }, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(OpKind::Mul, a, b, [](float x, float y) { return x * y; }, true);
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(OpKind::Div, a, b, [](float x, float y) { return x / y; }, true);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(OpKind::MatMul, a);
  require_rank2(OpKind::MatMul, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) mismatch(OpKind::MatMul, a, b);
  std::vector<float> out(n * m);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const float* row = pb + kk * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * static_cast<double>(row[j]);
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = static_cast<float>(acc[j]);
  }
  return make(node_of(OpKind::MatMul, {a, b}), {n, m}, std::move(out));
}

Tensor relu(const Tensor& x) {
  return unary(OpKind::Relu, x, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Tensor row_softmax(const Tensor& x) {
  require_rank2(OpKind::RowSoftmax, x);
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  std::vector<float> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = d.data() + i * m;
    const float mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
  }
  return make(node_of(OpKind::RowSoftmax, {x}), x.shape(), std::move(out));
}

Tensor exp(const Tensor& x) {
  return unary(OpKind::Exp, x, [](float v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (float v : x.data()) {
    if (!(v > 0.0f)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(OpKind::Log, x, [](float v) { return std::log(v); });
}

Tensor square(const Tensor& x) {
  return unary(OpKind::Square, x, [](float v) { return v * v; });
}

Tensor sqrt(const Tensor& x) {
  for (float v : x.data()) {
    if (v < 0.0f) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary(OpKind::Sqrt, x, [](float v) { return std::sqrt(v); });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make(node_of(OpKind::Sum, {x}), {}, {static_cast<float>(s)});
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make(node_of(OpKind::Mean, {x}), {}, {static_cast<float>(s / static_cast<double>(x.size()))});
}

Tensor sum_rows(const Tensor& x) {
  require_rank2(OpKind::SumRows, x);
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += d[i * m + j];
    out[i] = static_cast<float>(s);
  }
  return make(node_of(OpKind::SumRows, {x}), {n, 1}, std::move(out));
}

Tensor sum_cols(const Tensor& x) {
  require_rank2(OpKind::SumCols, x);
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  std::vector<double> acc(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) acc[j] += d[i * m + j];
  }
  std::vector<float> out(acc.begin(), acc.end());
  return make(node_of(OpKind::SumCols, {x}), {1, m}, std::move(out));
}

Tensor expand(const Tensor& x, const Shape& shape) {
  const std::size_t total = element_count(shape);
  const auto d = x.data();
  std::vector<float> out(total);
  if (x.size() == 1) {
    std::fill(out.begin(), out.end(), d[0]);
  } else {
    if (shape.size() != 2 || x.rank() != 2) {
      throw ShapeError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    const std::size_t n = shape[0], m = shape[1];
    if (x.rows() == 1 && x.cols() == m) {
      for (std::size_t i = 0; i < n; ++i) std::copy(d.begin(), d.end(), out.begin() + static_cast<long>(i * m));
    } else if (x.cols() == 1 && x.rows() == n) {
      for (std::size_t i = 0; i < n; ++i) std::fill_n(out.begin() + static_cast<long>(i * m), m, d[i]);
    } else {
      throw ShapeError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
  }
  return make(node_of(OpKind::Expand, {x}), shape, std::move(out));
}

Tensor gather_rows(const Tensor& table, std::vector<std::size_t> ids) {
  require_rank2(OpKind::GatherRows, table);
  const std::size_t m = table.cols();
  const auto d = table.data();
  std::vector<float> out(ids.size() * m);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " out of range for " +
                              shape_str(table.shape()));
    }
    std::copy_n(d.begin() + static_cast<long>(ids[i] * m), m, out.begin() + static_cast<long>(i * m));
  }
  Node n = node_of(OpKind::GatherRows, {table});
  const std::size_t rows = ids.size();
  n.indices = std::move(ids);
  return make(std::move(n), {rows, m}, std::move(out));
}

Tensor scatter_rows(const Tensor& src, std::vector<std::size_t> ids, std::size_t n_rows) {
  require_rank2(OpKind::ScatterRows, src);
  if (ids.size() != src.rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(ids.size()) + " indices for " + shape_str(src.shape()));
  }
  const std::size_t m = src.cols();
  const auto d = src.data();
  std::vector<double> acc(n_rows * m, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_rows) throw std::out_of_range("scatter_rows: index out of range");
    for (std::size_t j = 0; j < m; ++j) acc[ids[i] * m + j] += d[i * m + j];
  }
  Node n = node_of(OpKind::ScatterRows, {src});
  n.indices = std::move(ids);
  return make(std::move(n), {n_rows, m}, std::vector<float>(acc.begin(), acc.end()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) require_rank2(OpKind::Concat, p);
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t extent = 0;
  for (const Tensor& p : parts) {
    if ((axis == 0 ? p.cols() : p.rows()) != other) mismatch(OpKind::Concat, parts[0], p);
    extent += p.shape()[axis];
  }
  Shape shape = axis == 0 ? Shape{extent, other} : Shape{other, extent};
  std::vector<float> out(element_count(shape));
  if (axis == 0) {
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<long>(off));
      off += p.size();
    }
  } else {
    std::size_t col = 0;
    for (const Tensor& p : parts) {
      const std::size_t w = p.cols();
      for (std::size_t i = 0; i < other; ++i) {
        std::copy_n(p.data().begin() + static_cast<long>(i * w), w,
                    out.begin() + static_cast<long>(i * extent + col));
      }
      col += w;
    }
  }
  Node n = node_of(OpKind::Concat, parts);
  n.axis = axis;
  return make(std::move(n), std::move(shape), std::move(out));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_rank2(OpKind::Slice, x);
  if (axis > 1 || begin > end || end > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  Shape shape = axis == 0 ? Shape{end - begin, m} : Shape{n, end - begin};
  std::vector<float> out;
  out.reserve(element_count(shape));
  if (axis == 0) {
    out.assign(d.begin() + static_cast<long>(begin * m), d.begin() + static_cast<long>(end * m));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out.insert(out.end(), d.begin() + static_cast<long>(i * m + begin), d.begin() + static_cast<long>(i * m + end));
    }
  }
  Node node = node_of(OpKind::Slice, {x});
  node.axis = axis;
  node.begin = begin;
  node.end = end;
  return make(std::move(node), std::move(shape), std::move(out));
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t total) {
  require_rank2(OpKind::Pad, x);
  if (axis > 1 || begin + x.shape()[axis] > total) {
    throw ShapeError("pad: cannot place " + shape_str(x.shape()) + " at " + std::to_string(begin) +
                     " within extent " + std::to_string(total));
  }
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  Shape shape = axis == 0 ? Shape{total, m} : Shape{n, total};
  std::vector<float> out(element_count(shape), 0.0f);
  if (axis == 0) {
    std::copy(d.begin(), d.end(), out.begin() + static_cast<long>(begin * m));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(d.begin() + static_cast<long>(i * m), m, out.begin() + static_cast<long>(i * total + begin));
    }
  }
  Node node = node_of(OpKind::Pad, {x});
  node.axis = axis;
  node.begin = begin;
  node.end = begin + x.shape()[axis];
  return make(std::move(node), std::move(shape), std::move(out));
}

Tensor transpose(const Tensor& x) {
  require_rank2(OpKind::Transpose, x);
  const std::size_t n = x.rows(), m = x.cols();
  const auto d = x.data();
  std::vector<float> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = d[i * m + j];
  }
  return make(node_of(OpKind::Transpose, {x}), {m, n}, std::move(out));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make(node_of(OpKind::Reshape, {x}), std::move(shape), x.to_vector());
}

Tensor scalar_mul(const Tensor& x, float c) {
  Node n = node_of(OpKind::ScalarMul, {x});
  n.scalar = c;
  std::vector<float> out(x.size());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * d[i];
  return make(std::move(n), x.shape(), std::move(out));
}

Tensor clamp_min(const Tensor& x, float floor) {
  Node n = node_of(OpKind::ClampMin, {x});
  n.scalar = floor;
  std::vector<float> out(x.size());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > floor ? d[i] : floor;
  return make(std::move(n), x.shape(), std::move(out));
}

Tensor detach(const Tensor& x) { return Tensor::constant(x.shape(), x.to_vector()); }

Tensor cross_entropy_with_logits(const Tensor& logits, std::vector<std::size_t> targets) {
  require_rank2(OpKind::CrossEntropy, logits);
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  const auto d = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) throw std::out_of_range("cross_entropy_with_logits: target out of range");
    const float* row = d.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(z) - static_cast<double>(row[targets[i]]);
  }
  Node node = node_of(OpKind::CrossEntropy, {logits});
  node.indices = std::move(targets);
  return make(std::move(node), {}, {static_cast<float>(total / static_cast<double>(n))});
}

}  // namespace selfeq::tensor
