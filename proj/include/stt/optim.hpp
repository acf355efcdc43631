#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "stt/registry.hpp"

namespace stt {

// Linear warmup to peak_lr, then linear decay to zero at max_steps.
inline double lr_at(int step, double peak_lr, int warmup_steps, int max_steps) {
  if (warmup_steps < 1 || warmup_steps >= max_steps)
    throw std::invalid_argument("lr_at: need 1 <= warmup_steps < max_steps");
  if (step < 0 || step > max_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(max_steps) + "]");
  if (step <= warmup_steps)
    return peak_lr * static_cast<double>(step) / warmup_steps;
  return peak_lr * static_cast<double>(max_steps - step) / (max_steps - warmup_steps);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, matrices only
};

// AdamW over the trainable subset of a registry. Moment state is created once
// at construction; the trainable set must not change afterwards.
class AdamW {
 public:
  explicit AdamW(Registry& params, AdamWConfig cfg = {}) : params_(&params), cfg_(cfg) {
    for (Parameter* p : params.ordered()) {
      if (!p->trainable) continue;
      slots_.push_back(Slot{p, Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
    }
  }

  size_t num_slots() const { return slots_.size(); }
  int step_count() const { return t_; }

  // One update from the gradients currently accumulated in the registry.
  // Gradients of trainable parameters are cleared afterwards.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (Slot& s : slots_) {
      Parameter* p = s.param;
      const size_t n = p->value.numel();
      const bool decay = p->value.rank() >= 2;
      for (size_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(p->grad[i]);
        if (!std::isfinite(g))
          throw std::runtime_error("adamw: non-finite gradient in parameter " + p->name);
        const double m = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
        s.m[i] = static_cast<float>(m);
        s.v[i] = static_cast<float>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        if (decay) update += cfg_.weight_decay * static_cast<double>(p->value[i]);
        p->value[i] = static_cast<float>(p->value[i] - lr * update);
      }
      p->zero_grad();
    }
  }

 private:
  struct Slot {
    Parameter* param;
    Tensor m;
    Tensor v;
  };

  Registry* params_;
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  int t_ = 0;
};

}  // namespace stt
