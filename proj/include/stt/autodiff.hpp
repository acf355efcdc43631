#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

// Reverse-mode graph node. Graphs are built fresh for every pass and freed
// afterwards; nodes are only reachable downstream-to-upstream so shared_ptr
// ownership cannot cycle.
template <typename S>
struct NodeT {
  TensorT<S> value;
  TensorT<S> grad;  // allocated lazily during backward, zero-initialized
  std::vector<std::shared_ptr<NodeT<S>>> parents;
  std::function<void(NodeT<S>&)> backward_fn;
  bool need_grad = false;

  bool grad_ready() const { return !grad.empty(); }
};

template <typename S>
using VarT = std::shared_ptr<NodeT<S>>;

using Var = VarT<float>;
using Var64 = VarT<double>;

template <typename S>
VarT<S> make_leaf(TensorT<S> value, bool need_grad) {
  auto n = std::make_shared<NodeT<S>>();
  n->value = std::move(value);
  n->need_grad = need_grad;
  return n;
}

template <typename S>
VarT<S> make_const(TensorT<S> value) {
  return make_leaf(std::move(value), false);
}

template <typename S>
void ensure_grad(NodeT<S>& n) {
  if (n.grad.empty()) n.grad = TensorT<S>::zeros(n.value.shape());
}

namespace detail {

// Iterative post-order DFS; the order depends only on graph structure, so
// repeated passes over the same graph are bit-identical.
template <typename S>
std::vector<NodeT<S>*> topo_order(NodeT<S>* root) {
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  std::vector<std::pair<NodeT<S>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      NodeT<S>* p = top.first->parents[top.second++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Accumulates d(loss)/d(node) into every need_grad node reachable from loss.
// Each node's rule fires exactly once, in reverse topological order.
template <typename S>
void backward(const VarT<S>& loss) {
  if (loss->value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(loss->value.shape()));
  }
  auto order = detail::topo_order(loss.get());
  ensure_grad(*loss);
  loss->grad.data()[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<S>* n = *it;
    if (n->backward_fn && n->need_grad && n->grad_ready()) n->backward_fn(*n);
  }
}

// Clears every gradient in the graph so backward can be re-run from scratch.
template <typename S>
void zero_grads(const VarT<S>& root) {
  for (NodeT<S>* n : detail::topo_order(root.get())) {
    if (n->grad_ready()) n->grad.fill(S(0));
  }
}

}  // namespace stt
