#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace multipod {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Tag recorded on every graph node; used for diagnostics and tests.
enum class OpKind {
  Leaf,
  Conv2d,
  BatchNorm2d,
  Relu,
  Add,
  Mul,
  Linear,
  GlobalAvgPool,
  Concat,
  ConcatLinear,
  Slice,
  ScaleCombine,
  Pad2d,
  MaxPool2d,
  Sum,
  CrossEntropy,
};

const char* op_name(OpKind kind);

/// One vertex of the reverse-mode graph. Predecessors are owned through
/// `inputs`; whatever else backward needs is captured by `backward`.
template <typename T>
struct GraphNode {
  OpKind kind = OpKind::Leaf;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<GraphNode>> inputs;
  // Reads self.grad and accumulates into the grads of self.inputs.
  std::function<void(GraphNode& self)> backward;
};

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// Tensor behaves like a reference to a value in the computation graph.
///
/// Gradient semantics: backward() accumulates into the grad buffers of leaf
/// tensors. Nothing is zeroed implicitly; the optimizer clears gradients at
/// the step boundary (see sgd_step) and clear_grad() is available otherwise.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = GraphNode<T>;
  using BackwardFn = std::function<void(Node&)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);

  /// Result of a differentiable operation. The node records `inputs` and
  /// `backward` only when at least one input requires a gradient.
  static Tensor from_op(OpKind kind, Shape shape, std::vector<T> value,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const T> data() const;
  /// Mutable access to the value. Intended for leaves (parameters, inputs);
  /// mutating an interior node invalidates gradients of its consumers.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  /// Grad buffer, allocated as zeros on first use.
  std::span<T> mutable_grad();
  void clear_grad();

  OpKind op() const;
  std::size_t input_count() const;

  /// Reverse-mode sweep from this scalar. Each reachable node is visited
  /// once in reverse topological order.
  void backward() const;

  /// Leaf copy of the value with no history.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  const Node& checked() const;
  Node& checked();

  std::shared_ptr<Node> node_;
};

/// Grad buffer of a node, allocated as zeros if needed. For use inside
/// backward closures.
template <typename T>
std::span<T> grad_buffer(GraphNode<T>& node);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace multipod
