#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hrt::tensor {

using Shape = std::vector<std::size_t>;

// Storage aligned to the widest vector packet, so vectorized reductions
// split their sums the same way whatever address the allocator returns.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  // Empty until something propagates into this node.
  Buffer<T> grad;
  bool requires_grad = false;
  // Reads `grad` and accumulates into the inputs it captured.
  std::function<void()> backward;

  T* ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

// Shared handle to a dense row-major array. Copies alias the same storage;
// use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer<T> values, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Leading extent, or 1 for a rank-1 tensor treated as a row.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  const T* data() const { return node_->value.data(); }
  T* mutable_data() { return node_->value.data(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->ensure_grad(), node_->grad.size()}; }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const;
  // Same storage, reinterpreted extents.
  Tensor reshape(Shape shape) const;

  // Identity within a computation graph (and storage identity for parameters).
  const Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  template <typename U>
  friend Tensor<U> make_tensor(std::shared_ptr<Node<U>> node);

  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Tensor<T> make_tensor(std::shared_ptr<Node<T>> node) {
  return Tensor<T>(std::move(node));
}

// Ordered record of operations since the last reset. backward() visits the
// recorded nodes in reverse insertion order, which is a valid reverse
// topological order because every op is recorded after its inputs exist.
template <typename T>
class Graph {
 public:
  void record(std::shared_ptr<Node<T>> node) { tape_.push_back(std::move(node)); }
  void backward(const Tensor<T>& loss);
  void reset() { tape_.clear(); }
  std::size_t size() const { return tape_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> tape_;
};

// Graph that ops on the current thread record into, or null (inference).
template <typename T>
Graph<T>* active_graph();

// RAII activation of a graph on the current thread.
template <typename T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* previous_;
};

// Builds an op result. If a graph is active and any input requires gradients,
// the result is recorded with `backward`; otherwise backward is dropped.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward);

}  // namespace hrt::tensor
