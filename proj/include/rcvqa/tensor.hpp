#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rcvqa/error.hpp"

namespace rcvqa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Boolean tensor used to exclude positions (padding, masked pairs).
// A mask either matches the shape it is applied to or covers only the last
// axis and is repeated for every leading index.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> on;

  Mask() = default;
  Mask(Shape s, bool value) : shape(std::move(s)), on(shape_size(shape), value ? 1 : 0) {}
  Mask(Shape s, std::vector<std::uint8_t> values) : shape(std::move(s)), on(std::move(values)) {
    if (shape_size(shape) != on.size()) {
      throw DimensionError("mask shape " + shape_str(shape) + " does not match " +
                           std::to_string(on.size()) + " values");
    }
  }

  static Mask all(std::size_t n) { return Mask({n}, true); }

  static Mask prefix(std::size_t n, std::size_t valid) {
    Mask m({n}, false);
    std::fill(m.on.begin(), m.on.begin() + static_cast<std::ptrdiff_t>(std::min(n, valid)), 1);
    return m;
  }

  std::size_t size() const { return on.size(); }
  bool operator[](std::size_t i) const { return on[i] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1)); }
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into its inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(shape_size(shape), fill);
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (shape_size(shape) != values.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_size(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  static Tensor from_node(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct writes are reserved for leaves: initialization, optimizer updates
  // and finite-difference probing.
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) {
      node_->grad.assign(node_->value.size(), T(0));
    } else {
      node_->grad.clear();
    }
  }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  // A constant copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Builds an op output. When no input needs gradients the node keeps no
// history, so inference graphs are freed as they go.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const Tensor<T>* in : inputs) needs = needs || in->requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), T(0));
    for (const Tensor<T>* in : inputs) node->inputs.push_back(in->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), T(0));
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

// Ordered record of the ops reachable from a root, inputs before outputs.
template <class T>
class GradTape {
 public:
  explicit GradTape(const Tensor<T>& root) : root_(root.node()) {
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS; graphs from long training batches are deep.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root_, 0);
    seen.insert(root_);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<Node<T>*>& order() const { return order_; }

  // Interior grads are recomputed from scratch; leaf grads accumulate.
  void run() {
    for (Node<T>* n : order_) {
      if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
    root_->grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
  }

 private:
  Node<T>* root_;
  std::vector<Node<T>*> order_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss with no differentiable inputs");
  }
  GradTape<T>(loss).run();
}

}  // namespace rcvqa
