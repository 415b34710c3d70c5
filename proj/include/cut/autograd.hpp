#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Ops create nodes that remember their
// inputs and a backward closure; `backward(root)` walks the graph in reverse
// topological order. Parameter leaves accumulate into Parameter::grad, other
// leaves keep their gradient on the node.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cut/tensor.hpp"

namespace cut::ag {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    grad.fill(T(0));
  }
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  Parameter<T>* param = nullptr;

  /// Gradient buffer, zero-initialized on first touch.
  Tensor<T>& grad_buffer() {
    if (!grad_ready) {
      grad = Tensor<T>(value.shape);
      grad_ready = true;
    }
    return grad;
  }
  bool grad_ready = false;
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::int64_t dim(std::int64_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by the last backward pass. Throws InvalidState
  /// when none reached this node.
  const Tensor<T>& grad() const;
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  /// Scalar value of a single-element Var.
  T item() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> value);

template <class T>
Var<T> input(Tensor<T> value, bool requires_grad);

template <class T>
Var<T> param(Parameter<T>& p);

/// Builds an op node. `backward` reads self.grad and accumulates into
/// self.inputs[i]->grad_buffer() for inputs that require gradients.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward);

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

/// While alive, new nodes record no inputs or backward closures, so
/// intermediate values are freed as soon as they go out of scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct BackwardOptions {
  /// When false, Parameter::grad is left untouched (input gradients only).
  bool accumulate_params = true;
};

/// Backpropagates from a single-element root with seed 1.
template <class T>
void backward(const Var<T>& root, BackwardOptions opts = {});

template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed, BackwardOptions opts = {});

}  // namespace cut::ag
