#pragma once

// Dense f32 tensors with a define-by-run tape for reverse-mode gradients.
//
// Tensors are immutable values. An op whose inputs include at least one taped
// tensor appends a node to that tape; an op on constants only produces a
// constant. Backward can optionally record its own computation on the same
// tape (create_graph), which is what lets a gradient-derived quantity such as
// an explanation map be differentiated again with respect to the parameters.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfeq::tensor {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<float> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  // Row/column extents for rank-2 tensors; a rank-1 tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const float> data() const { return {data_->data(), data_->size()}; }
  float operator[](std::size_t i) const { return (*data_)[i]; }
  float at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  float item() const;
  std::vector<float> to_vector() const { return *data_; }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool requires_grad() const { return tape_ != nullptr; }

  // Same values, no tape.
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<float>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Relu,
  RowSoftmax,
  Exp,
  Log,
  Square,
  Sqrt,
  Sum,
  Mean,
  SumRows,
  SumCols,
  Expand,
  GatherRows,
  ScatterRows,
  Concat,
  Slice,
  Pad,
  Transpose,
  Reshape,
  ScalarMul,
  ClampMin,
  CrossEntropy,
};

const char* op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<Tensor> inputs;
  Tensor output;
  float scalar = 0.0f;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> indices;
};

// Append-only op record. Confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable leaf (parameter or input that needs a gradient).
  Tensor variable(Shape shape, std::vector<float> values);
  Tensor variable(const Tensor& value);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  // Fills gradient buffers for every node reachable backwards from root.
  // root must be a one-element tensor recorded on this tape.
  void backward(const Tensor& root);

  // Gradient of root with respect to each tensor in wrt; an entry is a zero
  // tensor when root does not depend on it. With create_graph the returned
  // gradients are themselves recorded on this tape.
  std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& wrt,
                           bool create_graph = false);

  // Buffer filled by the last backward(); empty when the node got no gradient.
  std::optional<Tensor> grad_of(const Tensor& t) const;

  // Internal: used by the op implementations.
  Tensor record(Node node, Shape shape, std::vector<float> values);

 private:
  std::vector<std::optional<Tensor>> propagate(const Tensor& root,
                                               const std::vector<char>* active,
                                               bool create_graph);

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

// ---- ops -------------------------------------------------------------------
// Shapes never broadcast implicitly. The one exception: mul/div accept a
// one-element tensor on either side (scalar times tensor). Everything else
// goes through expand().

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor row_softmax(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
// Gradient at 0 is taken as 0 (subgradient), so sqrt of an exact zero is safe.
Tensor sqrt(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// n x m -> n x 1
Tensor sum_rows(const Tensor& x);
// n x m -> 1 x m
Tensor sum_cols(const Tensor& x);
// Broadcast a one-element tensor, a 1 x m row or an n x 1 column to shape.
Tensor expand(const Tensor& x, const Shape& shape);
Tensor gather_rows(const Tensor& table, std::vector<std::size_t> ids);
// Inverse of gather_rows: out[ids[i]] += src[i], out has n_rows rows.
Tensor scatter_rows(const Tensor& src, std::vector<std::size_t> ids, std::size_t n_rows);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Zero-pads x along axis into an extent of total, placing it at offset begin.
Tensor pad(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t total);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor scalar_mul(const Tensor& x, float c);
Tensor clamp_min(const Tensor& x, float floor);
Tensor detach(const Tensor& x);
// Mean over rows of -log softmax(logits)[row, target[row]]; logits is n x c.
Tensor cross_entropy_with_logits(const Tensor& logits, std::vector<std::size_t> targets);

}  // namespace selfeq::tensor
