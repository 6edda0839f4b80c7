#pragma once

#include "bvton/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bvton {

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<S>& grad_ref() {
    if (grad.size() != value.size()) grad = Tensor<S>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the enclosing scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle onto a node of the reverse-mode tape. Copies share the node.
template <typename S>
class Var {
 public:
  using NodeT = Node<S>;

  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Tensor<S>& grad() const { return node_->grad_ref(); }
  Tensor<S>& mutable_grad() { return node_->grad_ref(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::shared_ptr<NodeT>& node() const { return node_; }

  /// Accumulation target for gradients flowing into this variable, or null.
  Tensor<S>* grad_sink() const { return requires_grad() ? &node_->grad_ref() : nullptr; }

  void zero_grad() {
    if (node_ && node_->has_grad()) node_->grad.fill(S(0));
  }

  static Var from_node(std::shared_ptr<NodeT> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Build a result node. The backward closure receives the result node (whose
/// grad is populated) and must accumulate into the parents' grad sinks.
template <typename S>
Var<S> make_result(Tensor<S> value, std::vector<Var<S>> parents,
                   std::function<void(Node<S>&)> backward) {
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  Var<S> out(std::move(value), any);
  if (any) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

template <typename S>
Var<S> detach(const Var<S>& v) {
  return Var<S>(v.value(), false);
}

template <typename S>
Var<S> constant(Tensor<S> t) {
  return Var<S>(std::move(t), false);
}

/// Reverse sweep from a scalar (or seeded) output.
template <typename S>
void backward(const Var<S>& root, const Tensor<S>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<S>& g = root.node()->grad_ref();
  if (seed) {
    require(seed->shape() == g.shape(), "backward: seed shape mismatch");
    g.array() += seed->array();
  } else {
    g.array() += S(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // Release intermediate graph state so repeated steps do not pin memory.
  for (Node<S>* n : order) {
    if (n->backward) {
      n->grad = Tensor<S>();
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace bvton
