// Dense row-major tensor with tape-style reverse-mode differentiation.
//
// A Tensor is a cheap handle to a shared graph node. Ops record their inputs
// and a backward closure on the output node whenever grad mode is enabled and
// at least one input requires a gradient; `backward()` walks the recorded
// graph in reverse topological order starting from a scalar loss.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ittr {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Storage with a fixed SIMD alignment, so vectorised kernels take the same
/// code path (and rounding) wherever a buffer lands on the heap.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// True while ops should record backward closures on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, Buffer<T> values);
  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), Buffer<T>(values)) {}
  Tensor(Shape shape, const std::vector<T>& values)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}

  static Tensor scalar(T value) { return Tensor(Shape{}, Buffer<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  const T* raw() const { return node_->value.data(); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  T item() const;
  T at(std::initializer_list<Index> idx) const;

  /// Leaf copy of the value with no history.
  Tensor detach() const;

  /// Reverse-mode sweep from this scalar; grads accumulate into leaves.
  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

/// Builds an op output. Records `fn` only when grad mode is on and some input
/// requires a gradient. Throws NumericError on non-finite output values.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T>&& value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      BackwardFn<T> fn);

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T>&& value,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> fn);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

}  // namespace ittr
