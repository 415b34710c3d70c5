#include "cut/autograd.hpp"

#include <sstream>
#include <unordered_set>

#include "cut/simd/kernels.hpp"

namespace cut {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace ag {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
const Tensor<T>& Var<T>::grad() const {
  CUT_REQUIRE(node_ && node_->grad_ready, InvalidState,
              "no gradient reached this node");
  return node_->grad;
}

template <class T>
T Var<T>::item() const {
  CUT_REQUIRE(node_ && node_->value.numel() == 1, InvalidArgument,
              "item() requires a single-element value");
  return node_->value[0];
}

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

template <class T>
Var<T> input(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  return Var<T>(std::move(n));
}

template <class T>
Var<T> param(Parameter<T>& p) {
  auto n = std::make_shared<Node<T>>();
  n->value = p.value;
  n->requires_grad = g_grad_enabled;
  if (g_grad_enabled) n->param = &p;
  return Var<T>(std::move(n));
}

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(n));
}

namespace {

template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

}  // namespace

template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed, BackwardOptions opts) {
  CUT_REQUIRE(root.defined(), InvalidState, "backward on undefined Var");
  if (!root.requires_grad()) return;
  require_same_shape(root.value(), seed, "backward seed");
  auto order = topo_order(root.node());
  for (Node<T>* n : order) n->grad_ready = false;
  root.node()->grad_buffer() = seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->grad_ready) continue;
    if (n->backward_fn) n->backward_fn(*n);
    if (n->param != nullptr && opts.accumulate_params) {
      Parameter<T>& p = *n->param;
      if (p.grad.shape != p.value.shape) p.zero_grad();
      simd::axpy<T>(p.grad.numel(), T(1), n->grad.ptr(), p.grad.ptr());
    }
  }
}

template <class T>
void backward(const Var<T>& root, BackwardOptions opts) {
  CUT_REQUIRE(root.defined() && root.value().numel() == 1, InvalidArgument,
              "backward() without seed requires a single-element root");
  backward(root, Tensor<T>(root.shape(), T(1)), opts);
}

#define CUT_INSTANTIATE(T)                                                  \
  template class Var<T>;                                                    \
  template Var<T> constant<T>(Tensor<T>);                                   \
  template Var<T> input<T>(Tensor<T>, bool);                                \
  template Var<T> param<T>(Parameter<T>&);                                  \
  template Var<T> make_op<T>(Tensor<T>, std::vector<Var<T>>,                \
                             std::function<void(Node<T>&)>);                \
  template void backward<T>(const Var<T>&, BackwardOptions);                \
  template void backward<T>(const Var<T>&, const Tensor<T>&, BackwardOptions);

CUT_INSTANTIATE(float)
CUT_INSTANTIATE(double)

}  // namespace ag
}  // namespace cut
