#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vmt/error.hpp"

namespace vmt {

/// Dimension sizes, outermost first. An empty shape is a scalar.
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Real T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

namespace detail {

template <Real T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;  // reads this->grad, accumulates into parents

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense row-major tensor handle.
///
/// Copies share storage and graph position (like a reference-counted
/// handle); use clone() or detach() for an independent value. The dtype is
/// the template parameter, so mixing float32 and float64 in one graph does
/// not compile.
template <Real T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data has " + std::to_string(values.size()) + " values but shape " +
                       to_string(shape) + " needs " + std::to_string(numel(shape)));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
  }

  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(numel(shape), value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) { return Tensor(Shape{}, {value}, requires_grad); }

  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }

  /// Direct write access for initialisation and optimizer updates. Callers
  /// must hold exclusive access and must not mutate values a live graph
  /// still depends on.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (size() != 1) throw ShapeError("item() needs a single-element tensor, got shape " + to_string(shape()));
    return node_->data[0];
  }

  T operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw AutogradError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient; all zeros if nothing has flowed here yet.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(size(), T(0));
    return node_->grad;
  }

  std::span<T> mutable_grad() { return node_->grad_buffer(); }

  void zero_grad() { node_->grad.clear(); }

  /// Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad() && node_->is_leaf()); }

  const NodePtr& node() const { return node_; }

  /// Builds an op result. Graph edges are kept only when recording is
  /// enabled and some input requires a gradient.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<NodePtr> inputs,
                        std::function<void(const detail::Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents = std::move(inputs);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  NodePtr node_;
};

/// Ordered record of the differentiable operations reachable from a root,
/// inputs before the operations that consume them.
template <Real T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  static Tape record(const Tensor<T>& root) {
    Tape tape;
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order DFS; recursion would overflow on long recurrences.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        const NodePtr& p = node->parents[next++];
        if (p->requires_grad && !p->is_leaf() && seen.insert(p.get()).second) stack.emplace_back(p, 0);
        continue;
      }
      tape.order_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<NodePtr>& nodes() const { return order_; }

 private:
  std::vector<NodePtr> order_;
};

/// Reverse-mode sweep from a scalar loss. Leaf tensors accumulate into
/// their grad buffers (so several graphs may contribute before an optimizer
/// step); the graph itself is released and cannot be swept again.
template <Real T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw AutogradError("backward on an undefined tensor");
  if (loss.size() != 1) throw AutogradError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  const auto& root = loss.node();
  if (root->consumed) throw AutogradError("backward called twice on the same graph; run the forward pass again");
  if (!root->requires_grad) throw AutogradError("loss does not depend on any tensor that requires grad");
  if (root->is_leaf()) {
    root->grad_buffer()[0] += T(1);
    return;
  }
  Tape<T> tape = Tape<T>::record(loss);
  root->grad_buffer()[0] = T(1);
  const auto& order = tape.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = **it;
    if (!node.grad.empty()) node.backward_fn(node);
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
  for (const auto& node : order) {
    node->parents.clear();
    node->backward_fn = nullptr;
    node->consumed = true;
    node->requires_grad = false;
  }
}

}  // namespace vmt
