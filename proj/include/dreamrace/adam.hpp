#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dreamrace/tensor.hpp"

namespace dreamrace {

template <typename T>
struct AdamConfig {
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T clip_norm = T(100);  // global gradient-norm clip; <= 0 disables
};

// first/second-moment state for one parameter set
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t step = 0;
};

// one bias-corrected Adam update; grads are read from each Param's grad
// accumulator and left untouched
template <typename T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->size(), T(0));
      state.v.emplace_back(p->size(), T(0));
    }
  }
  state.step += 1;

  T gscale = T(1);
  if (cfg.clip_norm > T(0)) {
    double sq = 0.0;
    for (auto* p : params)
      for (T g : p->grad) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > double(cfg.clip_norm)) gscale = T(double(cfg.clip_norm) / norm);
  }

  const T bc1 = T(1) - std::pow(cfg.beta1, T(state.step));
  const T bc2 = T(1) - std::pow(cfg.beta2, T(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (long i = 0; i < p.size(); ++i) {
      const T g = p.grad[i] * gscale;
      m[i] = cfg.beta1 * m[i] + (T(1) - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (T(1) - cfg.beta2) * g * g;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// convenience wrapper owning config + state for one parameter group
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param<T>*> params, AdamConfig<T> cfg)
      : params_(std::move(params)), cfg_(cfg) {}

  void step() { adam_step(params_, state_, cfg_); }
  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const std::vector<Param<T>*>& params() const { return params_; }
  AdamState<T>& state() { return state_; }
  AdamConfig<T>& config() { return cfg_; }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig<T> cfg_;
  AdamState<T> state_;
};

}  // namespace dreamrace
