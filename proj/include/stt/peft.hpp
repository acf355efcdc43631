#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "stt/registry.hpp"
#include "stt/rng.hpp"

namespace stt {

enum class PeftPolicy { kFull, kLna, kLora, kFreezeEncoder, kFreezeDecoder };

inline const char* peft_policy_name(PeftPolicy p) {
  switch (p) {
    case PeftPolicy::kFull: return "full";
    case PeftPolicy::kLna: return "lna";
    case PeftPolicy::kLora: return "lora";
    case PeftPolicy::kFreezeEncoder: return "freeze-encoder";
    case PeftPolicy::kFreezeDecoder: return "freeze-decoder";
  }
  return "?";
}

inline PeftPolicy parse_peft_policy(const std::string& name) {
  if (name == "full") return PeftPolicy::kFull;
  if (name == "lna") return PeftPolicy::kLna;
  if (name == "lora") return PeftPolicy::kLora;
  if (name == "freeze-encoder") return PeftPolicy::kFreezeEncoder;
  if (name == "freeze-decoder") return PeftPolicy::kFreezeDecoder;
  throw std::invalid_argument("unknown peft policy '" + name + "'");
}

enum class LoraTargets { kQV, kQKVO, kAllLinear };

inline const char* lora_targets_name(LoraTargets t) {
  switch (t) {
    case LoraTargets::kQV: return "qv";
    case LoraTargets::kQKVO: return "qkvo";
    case LoraTargets::kAllLinear: return "all-linear";
  }
  return "?";
}

inline LoraTargets parse_lora_targets(const std::string& name) {
  if (name == "qv") return LoraTargets::kQV;
  if (name == "qkvo") return LoraTargets::kQKVO;
  if (name == "all-linear") return LoraTargets::kAllLinear;
  throw std::invalid_argument("unknown lora target set '" + name + "'");
}

struct LoraConfig {
  int rank = 8;
  double alpha = 0.0;  // 0 means alpha = rank, i.e. scale 1
  LoraTargets targets = LoraTargets::kQV;

  double scale() const { return (alpha == 0.0 ? rank : alpha) / rank; }

  void validate() const {
    if (rank < 1) throw std::invalid_argument("lora: rank must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("lora: alpha must be >= 0");
  }
};

// One low-rank residual bound to a base weight W[d_in x d_out]:
// y = x W + scale * (x A) B with A[d_in x r] random, B[r x d_out] zero.
struct LoraAdapter {
  std::string base;
  std::string a_name;
  std::string b_name;
  double scale = 1.0;
  bool merged = false;
};

template <typename S>
struct PeftStateT {
  PeftPolicy policy = PeftPolicy::kFull;
  LoraConfig lora;
  std::vector<LoraAdapter> adapters;

  LoraAdapter* find(const std::string& base) {
    for (auto& a : adapters)
      if (a.base == base) return &a;
    return nullptr;
  }
  const LoraAdapter* find(const std::string& base) const {
    for (const auto& a : adapters)
      if (a.base == base) return &a;
    return nullptr;
  }
};

using PeftState = PeftStateT<float>;

namespace peft_detail {

inline bool in_groups(ParamGroup g, std::initializer_list<ParamGroup> groups) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

}  // namespace peft_detail

// LNA: the decoder trains only its layer norms and self-attention; the
// speech encoder and adaptor always train in full.
template <typename S>
void apply_lna(RegistryT<S>& params) {
  for (auto* p : params.ordered()) {
    p->trainable = peft_detail::in_groups(
        p->group, {ParamGroup::kEncoder, ParamGroup::kAdaptor, ParamGroup::kDecoderLn,
                   ParamGroup::kDecoderAttn});
  }
}

template <typename S>
void apply_freeze(RegistryT<S>& params, PeftPolicy policy) {
  for (auto* p : params.ordered()) {
    const bool enc_side =
        peft_detail::in_groups(p->group, {ParamGroup::kEncoder, ParamGroup::kAdaptor});
    switch (policy) {
      case PeftPolicy::kFull: p->trainable = true; break;
      case PeftPolicy::kFreezeEncoder: p->trainable = !enc_side; break;
      case PeftPolicy::kFreezeDecoder: p->trainable = enc_side; break;
      default: throw std::invalid_argument("apply_freeze: not a freeze policy");
    }
  }
}

// The decoder projection weights a LoRA target set covers, given the layer
// count. Layout follows the model's registry naming.
inline std::vector<std::string> lora_target_names(int decoder_layers, LoraTargets targets) {
  std::vector<std::string> names;
  for (int i = 0; i < decoder_layers; ++i) {
    const std::string prefix = "dec.l" + std::to_string(i) + ".";
    names.push_back(prefix + "attn.wq");
    names.push_back(prefix + "attn.wv");
    if (targets == LoraTargets::kQKVO || targets == LoraTargets::kAllLinear) {
      names.push_back(prefix + "attn.wk");
      names.push_back(prefix + "attn.wo");
    }
    if (targets == LoraTargets::kAllLinear) {
      names.push_back(prefix + "ffn.w1");
      names.push_back(prefix + "ffn.w2");
    }
  }
  if (targets == LoraTargets::kAllLinear) names.push_back("dec.out.w");
  return names;
}

// Injects adapters for every target and freezes everything except the
// encoder, adaptor and the adapter matrices themselves.
template <typename S>
void apply_lora(RegistryT<S>& params, PeftStateT<S>& state, const std::vector<std::string>& target_names,
                const LoraConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (target_names.empty()) throw std::invalid_argument("lora: empty target set");
  state.lora = cfg;
  state.adapters.clear();

  RandomSource rng(mix64(seed, 0x6c6f7261));
  for (const std::string& base : target_names) {
    auto& w = params.at(base);
    if (w.value.rank() != 2)
      throw std::invalid_argument("lora: target " + base + " is not a matrix");
    const int d_in = w.value.rows(), d_out = w.value.cols();
    if (cfg.rank > std::min(d_in, d_out))
      throw std::invalid_argument("lora: rank " + std::to_string(cfg.rank) + " exceeds min dim of " +
                                  base + " " + shape_str(w.value.shape()));
    LoraAdapter adapter;
    adapter.base = base;
    adapter.a_name = base + ".lora.A";
    adapter.b_name = base + ".lora.B";
    adapter.scale = cfg.scale();

    TensorT<S> a({d_in, cfg.rank});
    for (size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<S>(rng.gaussian(0.0, 0.02));
    params.add(adapter.a_name, std::move(a), w.group);
    params.add(adapter.b_name, TensorT<S>::zeros({cfg.rank, d_out}), w.group);
    state.adapters.push_back(std::move(adapter));
  }

  for (auto* p : params.ordered()) {
    p->trainable =
        peft_detail::in_groups(p->group, {ParamGroup::kEncoder, ParamGroup::kAdaptor});
  }
  for (const auto& a : state.adapters) {
    params.at(a.a_name).trainable = true;
    params.at(a.b_name).trainable = true;
  }
}

// Folds one adapter into its base weight (W += scale * A * B) and removes the
// adapter parameters. Merging twice is an error.
template <typename S>
void merge_lora(RegistryT<S>& params, LoraAdapter& adapter) {
  if (adapter.merged) throw std::runtime_error("lora: adapter for " + adapter.base + " already merged");
  auto& w = params.at(adapter.base);
  const auto& a = params.at(adapter.a_name).value;
  const auto& b = params.at(adapter.b_name).value;
  const int d_in = w.value.rows(), d_out = w.value.cols(), r = a.cols();
  for (int i = 0; i < d_in; ++i) {
    for (int p = 0; p < r; ++p) {
      const S av = static_cast<S>(adapter.scale) * a.at(i, p);
      if (av == S(0)) continue;
      for (int j = 0; j < d_out; ++j) w.value.at(i, j) += av * b.at(p, j);
    }
  }
  params.remove(adapter.a_name);
  params.remove(adapter.b_name);
  adapter.merged = true;
}

}  // namespace stt
