#include "multipod/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "multipod/errors.hpp"

namespace multipod {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::BatchNorm2d: return "batch_norm2d";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Linear: return "linear";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Concat: return "concat";
    case OpKind::ConcatLinear: return "concat_linear";
    case OpKind::Slice: return "slice";
    case OpKind::ScaleCombine: return "elementwise_scale_combine";
    case OpKind::Pad2d: return "pad2d";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::Sum: return "sum";
    case OpKind::CrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
std::span<T> grad_buffer(GraphNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), T(0));
  return node.grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  std::vector<T> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(OpKind kind, Shape shape, std::vector<T> value,
                             std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(value), false);
  out.node_->kind = kind;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <typename T>
const GraphNode<T>& Tensor<T>::checked() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

template <typename T>
GraphNode<T>& Tensor<T>::checked() {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked().shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return checked().value.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return checked().value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return checked().value;
}

template <typename T>
T Tensor<T>::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(n.shape));
  }
  return n.value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& n = checked();
  if (n.grad.empty()) throw StateError("tensor has no gradient");
  return n.grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return grad_buffer(checked());
}

template <typename T>
void Tensor<T>::clear_grad() {
  auto& n = checked();
  n.grad.clear();
  n.grad.shrink_to_fit();
}

template <typename T>
OpKind Tensor<T>::op() const {
  return checked().kind;
}

template <typename T>
std::size_t Tensor<T>::input_count() const {
  return checked().inputs.size();
}

template <typename T>
void Tensor<T>::backward() const {
  const auto& root = checked();
  if (root.value.size() != 1) {
    throw ArgumentError("backward() requires a scalar, got shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) {
    throw ArgumentError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS; `order` ends up topologically sorted with the
  // root last.
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  grad_buffer(*node_)[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  const auto& n = checked();
  return Tensor(n.shape, n.value, requires_grad);
}

template std::span<float> grad_buffer(GraphNode<float>&);
template std::span<double> grad_buffer(GraphNode<double>&);
template class Tensor<float>;
template class Tensor<double>;

}  // namespace multipod
