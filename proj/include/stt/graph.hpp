#pragma once

#include <unordered_map>
#include <utility>
#include <vector>

#include "stt/autodiff.hpp"
#include "stt/registry.hpp"

namespace stt {

// Tracks the leaf node created for each parameter while one forward graph is
// built, so gradients can be pushed back into the registry afterwards in
// registration order. One context per graph; never shared across threads.
template <typename S>
class GraphCtxT {
 public:
  // with_grads=false builds forward-only graphs (inference/decoding).
  explicit GraphCtxT(RegistryT<S>& params, bool with_grads = true)
      : params_(&params), with_grads_(with_grads) {}

  RegistryT<S>& params() { return *params_; }

  VarT<S> leaf(const std::string& name) {
    ParameterT<S>* p = &params_->at(name);
    auto it = leaves_.find(p);
    if (it != leaves_.end()) return it->second;
    VarT<S> v = make_leaf(p->value, with_grads_ && p->trainable);
    leaves_.emplace(p, v);
    order_.push_back(p);
    return v;
  }

  // Adds each trainable leaf's gradient into its parameter accumulator,
  // scaled by `weight`, in a fixed order independent of build details.
  void harvest_grads(S weight = S(1)) {
    for (ParameterT<S>* p : params_->ordered()) {
      auto it = leaves_.find(p);
      if (it == leaves_.end()) continue;
      const auto& leaf = it->second;
      if (!p->trainable || !leaf->grad_ready()) continue;
      const size_t n = p->grad.numel();
      for (size_t i = 0; i < n; ++i) p->grad[i] += weight * leaf->grad[i];
    }
  }

 private:
  RegistryT<S>* params_;
  bool with_grads_ = true;
  std::unordered_map<ParameterT<S>*, VarT<S>> leaves_;
  std::vector<ParameterT<S>*> order_;
};

using GraphCtx = GraphCtxT<float>;

// A built graph bound to its parameter leaves.
template <typename S>
struct BoundLossT {
  VarT<S> loss;
  GraphCtxT<S> ctx;
};

}  // namespace stt
