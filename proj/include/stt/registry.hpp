#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

// Which part of the network a parameter belongs to; trainability policies
// are expressed over these groups.
enum class ParamGroup {
  kEncoder,
  kAdaptor,
  kDecoderEmbed,
  kDecoderLn,
  kDecoderAttn,
  kDecoderFfn,
  kOutputProj,
};

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kAdaptor: return "adaptor";
    case ParamGroup::kDecoderEmbed: return "decoder-embed";
    case ParamGroup::kDecoderLn: return "decoder-ln";
    case ParamGroup::kDecoderAttn: return "decoder-attn";
    case ParamGroup::kDecoderFfn: return "decoder-ffn";
    case ParamGroup::kOutputProj: return "output-proj";
  }
  return "?";
}

template <typename S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;  // accumulated across a batch, zeroed by the optimizer step
  bool trainable = true;
  ParamGroup group = ParamGroup::kEncoder;

  void zero_grad() { grad.fill(S(0)); }
};

using Parameter = ParameterT<float>;

// Ordered, name-addressed parameter store. Pointers stay valid for the life
// of the registry; iteration order is registration order.
template <typename S>
class RegistryT {
 public:
  ParameterT<S>& add(const std::string& name, TensorT<S> value, ParamGroup group) {
    if (index_.count(name)) throw std::runtime_error("registry: duplicate parameter " + name);
    auto p = std::make_unique<ParameterT<S>>();
    p->name = name;
    p->grad = TensorT<S>::zeros(value.shape());
    p->value = std::move(value);
    p->group = group;
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  ParameterT<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("registry: no parameter named " + name);
    return *params_[it->second];
  }
  const ParameterT<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("registry: no parameter named " + name);
    return *params_[it->second];
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("registry: no parameter named " + name);
    const size_t idx = it->second;
    params_.erase(params_.begin() + static_cast<long>(idx));
    index_.erase(it);
    for (auto& [n, i] : index_)
      if (i > idx) --i;
  }

  size_t size() const { return params_.size(); }

  // registration order
  std::vector<ParameterT<S>*> ordered() {
    std::vector<ParameterT<S>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const ParameterT<S>*> ordered() const {
    std::vector<const ParameterT<S>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  size_t total_elements() const {
    size_t n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

  size_t trainable_elements() const {
    size_t n = 0;
    for (auto& p : params_)
      if (p->trainable) n += p->value.numel();
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParameterT<S>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

using Registry = RegistryT<float>;

}  // namespace stt
