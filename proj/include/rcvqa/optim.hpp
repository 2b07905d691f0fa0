#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcvqa/error.hpp"
#include "rcvqa/params.hpp"

namespace rcvqa {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  AdamHyper hyper;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<T>> v;  // second moments
};

// One bias-corrected ADAM update of a single buffer at step `step` (1-based).
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t step,
                 double lr, const AdamHyper& h) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment buffers differ in size");
  }
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps));
  }
}

template <class T>
OptimizerState<T> make_optimizer_state(const ParameterStore<T>& params, AdamHyper hyper = {}) {
  OptimizerState<T> s;
  s.hyper = hyper;
  for (const auto& [name, t] : params) {
    s.m.emplace_back(t.size(), T(0));
    s.v.emplace_back(t.size(), T(0));
  }
  return s;
}

// Applies one ADAM step to every parameter using its accumulated gradient.
template <class T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.m.size()) + " buffers for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  std::size_t k = 0;
  for (auto& [name, t] : params) {
    if (state.m[k].size() != t.size()) throw DimensionError("optimizer state shape mismatch for " + name);
    adam_update<T>(t.mutable_data(), t.grad(), state.m[k], state.v[k], state.step, lr, state.hyper);
    ++k;
  }
}

template <class T>
double global_grad_norm(const ParameterStore<T>& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params)
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [name, t] : params)
      for (T& g : t.mutable_grad()) g *= factor;
  }
  return norm;
}

// Step decay with a floor, or a piecewise-constant phase list when phases
// are configured (the finetune profile).
struct Schedule {
  double base_lr = 0.001;
  double decay = 0.8;
  std::size_t interval = 3;
  double floor = 0.0001;
  std::vector<std::pair<std::size_t, double>> phases;  // (epochs, rate)

  static Schedule from_scratch() { return {}; }

  static Schedule finetune() {
    Schedule s;
    s.phases = {{10, 0.001}, {10, 0.0001}};
    return s;
  }

  std::size_t phase_epochs() const {
    std::size_t n = 0;
    for (const auto& p : phases) n += p.first;
    return n;
  }
};

// max(floor, base_lr * decay^floor(epoch / interval)); phases, when set,
// take precedence and the last phase extends indefinitely.
inline double lr_at(const Schedule& s, std::size_t epoch) {
  if (!s.phases.empty()) {
    std::size_t start = 0;
    for (const auto& [epochs, rate] : s.phases) {
      if (epoch < start + epochs) return rate;
      start += epochs;
    }
    return s.phases.back().second;
  }
  if (s.interval == 0) throw ConfigError("schedule interval must be at least 1");
  const double rate = s.base_lr * std::pow(s.decay, static_cast<double>(epoch / s.interval));
  return std::max(s.floor, rate);
}

}  // namespace rcvqa
