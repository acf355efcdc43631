#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stt/autodiff.hpp"
#include "stt/graph.hpp"
#include "stt/registry.hpp"

namespace stt {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double eps = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

// Central-difference check of a scalar graph against the analytic backward
// pass. `build` must rebuild the whole graph from the current parameter
// values on every call; finite differences are the independent oracle here
// and never touch the backward rules being checked. Run this at f64.
template <typename S>
GradCheckReport grad_check(RegistryT<S>& params,
                           const std::function<BoundLossT<S>()>& build, double eps,
                           double tolerance) {
  GradCheckReport report;

  params.zero_grads();
  {
    BoundLossT<S> g = build();
    backward(g.loss);
    g.ctx.harvest_grads();
  }

  const auto loss_value = [&]() -> double {
    return static_cast<double>(build().loss->value[0]);
  };

  for (ParameterT<S>* p : params.ordered()) {
    if (!p->trainable) continue;
    GradCheckEntry entry;
    entry.name = p->name;
    entry.eps = eps;
    double worst = 0.0;
    const size_t n = p->value.numel();
    for (size_t i = 0; i < n; ++i) {
      const S saved = p->value[i];
      p->value[i] = saved + static_cast<S>(eps);
      const double up = loss_value();
      p->value[i] = saved - static_cast<S>(eps);
      const double down = loss_value();
      p->value[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = static_cast<double>(p->grad[i]);
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
    }
    entry.max_rel_err = worst;
    entry.pass = worst <= tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace stt
