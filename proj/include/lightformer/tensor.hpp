// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor<S> is a cheap value handle onto a shared node. Operations on
// tensors (see ops.hpp) compute their result eagerly and, while gradients are
// enabled and some input requires them, record a backward closure onto the
// result node. backward(loss) replays those closures in reverse topological
// order, accumulating each node's total derivative additively, then releases
// the tape so a graph lives for exactly one forward/backward pass.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "lightformer/errors.hpp"

namespace lightformer {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Thread-local switch; forwards run with it off (e.g. evaluation) record no tape.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;

  // Adds g into this node's gradient buffer if it participates in the tape.
  void accumulate(const std::vector<S>& g) {
    if (!requires_grad) return;
    if (grad.empty()) grad.assign(values.size(), S(0));
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
  std::vector<S>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), S(0));
    return grad;
  }
};

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Node = TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), S(1)); }

  static Tensor filled(Shape shape, S value) {
    check_shape(shape);
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  static Tensor scalar(S value) { return from_data({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->values.size()); }

  std::vector<S>& values() { return node_->values; }
  const std::vector<S>& values() const { return node_->values; }

  // Row-major element access; rank must match the number of indices.
  template <typename... Ix>
  S& at(Ix... indices) {
    return node_->values[offset_of({static_cast<int>(indices)...})];
  }
  template <typename... Ix>
  S at(Ix... indices) const {
    return node_->values[offset_of({static_cast<int>(indices)...})];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty()) throw ContractError("tensor has no gradient; run backward first");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->values.size(), S(0)); }
  void clear_grad() { node_->grad.clear(); }

  void backward();

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }

  std::size_t offset_of(std::initializer_list<int> indices) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (int ix : indices) {
      off = off * static_cast<std::size_t>(node_->shape[axis]) + static_cast<std::size_t>(ix);
      ++axis;
    }
    return off;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Depth-first post-order over parents, iterative so deep graphs cannot
// overflow the call stack.
template <typename S>
std::vector<TensorNode<S>*> topo_order(TensorNode<S>* root) {
  std::vector<TensorNode<S>*> order;
  std::unordered_set<TensorNode<S>*> visited;
  std::vector<std::pair<TensorNode<S>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<S>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

template <typename S>
void Tensor<S>::backward() {
  if (!defined()) throw ContractError("backward on an undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));
  }
  auto order = detail::topo_order<S>(node_.get());
  node_->grad_buffer()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
  // The tape is single-use: drop closures and parent links so intermediate
  // nodes free as their handles go out of scope. Gradients stay in place.
  for (auto* n : order) {
    n->backward = nullptr;
    n->parents.clear();
  }
}

template <typename S>
void backward(Tensor<S>& loss) {
  loss.backward();
}

}  // namespace lightformer
