#include "ittr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ittr {

namespace {
thread_local bool t_grad_enabled = true;
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>()) {
  for (Index e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  node_->value.assign(static_cast<size_t>(ittr::numel(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : node_(std::make_shared<Node<T>>()) {
  for (Index e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  if (ittr::numel(shape) != static_cast<Index>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[static_cast<size_t>(axis)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != rank()) throw ShapeError("index rank mismatch");
  Index flat = 0;
  int axis = 0;
  for (Index i : idx) {
    const Index e = node_->shape[static_cast<size_t>(axis++)];
    if (i < 0 || i >= e) throw ShapeError("index out of range");
    flat = flat * e + i;
  }
  return node_->value[static_cast<size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1 || rank() > 1)
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace detail {

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T>&& value,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> fn) {
  check_finite<T>(op, value);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor<T>* in : inputs) any = any || (in->defined() && in->requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const Tensor<T>* in : inputs)
        if (in->defined()) node->parents.push_back(in->node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T>&& value,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> fn) {
  check_finite<T>(op, value);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

#define ITTR_INSTANTIATE(T)                                                                  \
  template void check_finite<T>(const char*, std::span<const T>);                            \
  template Tensor<T> make_result<T>(const char*, Shape, Buffer<T>&&,                    \
                                    std::initializer_list<const Tensor<T>*>, BackwardFn<T>); \
  template Tensor<T> make_result<T>(const char*, Shape, Buffer<T>&&,                    \
                                    const std::vector<Tensor<T>>&, BackwardFn<T>);
ITTR_INSTANTIATE(float)
ITTR_INSTANTIATE(double)
#undef ITTR_INSTANTIATE

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace ittr
