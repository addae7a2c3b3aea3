#include "hrt/tensor/tensor.hpp"

#include <sstream>

namespace hrt::tensor {

std::size_t shape_size(const Shape& shape) {
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

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& values, bool requires_grad)
    : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad)
    : Tensor(std::move(shape), Buffer<T>(values), requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), Buffer<T>(n, value));
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return node_->shape.size() == 1 ? 1 : node_->shape.front();
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(node_->shape, node_->value, node_->requires_grad);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = node_->value;
  // Reshape is only used on values outside of recorded graphs.
  return Tensor(node);
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || !loss.requires_grad()) return;
  auto* seed = loss.node().get();
  T* g = seed->ensure_grad();
  for (std::size_t i = 0; i < seed->value.size(); ++i) g[i] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node<T>& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward();
  }
}

namespace {
template <typename T>
Graph<T>*& active_slot() {
  thread_local Graph<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
Graph<T>* active_graph() {
  return active_slot<T>();
}

template <typename T>
GraphScope<T>::GraphScope(Graph<T>& graph) : previous_(active_slot<T>()) {
  active_slot<T>() = &graph;
}

template <typename T>
GraphScope<T>::~GraphScope() {
  active_slot<T>() = previous_;
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  Graph<T>* graph = active_graph<T>();
  bool needs = false;
  if (graph != nullptr) {
    for (const auto* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  }
  if (needs && backward) {
    node->requires_grad = true;
    Node<T>* self = node.get();
    node->backward = [self, fn = std::move(backward)]() { fn(*self); };
    graph->record(node);
  }
  return make_tensor<T>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template class GraphScope<float>;
template class GraphScope<double>;
template Graph<float>* active_graph<float>();
template Graph<double>* active_graph<double>();
template Tensor<float> make_result<float>(Shape, Buffer<float>,
                                          std::initializer_list<const Tensor<float>*>,
                                          std::function<void(Node<float>&)>);
template Tensor<double> make_result<double>(Shape, Buffer<double>,
                                            std::initializer_list<const Tensor<double>*>,
                                            std::function<void(Node<double>&)>);

}  // namespace hrt::tensor
