#include "selfeq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace selfeq::tensor {

void optimizer_step(OptimizerState& state, ParameterMap& params, const GradientMap& grads) {
  for (const auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("optimizer_step: missing gradient for " + name);
    if (it->second.size() != p.values.size()) {
      throw ShapeError("optimizer_step: gradient for " + name + " has " + std::to_string(it->second.size()) +
                       " values, parameter has " + std::to_string(p.values.size()));
    }
  }
  ++state.step_count;
  const double lr = state.learning_rate;
  if (state.kind == OptimizerKind::Sgd) {
    for (auto& [name, p] : params) {
      const auto& g = grads.at(name);
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        p.values[i] = static_cast<float>(p.values[i] - lr * g[i]);
      }
    }
    return;
  }
  const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.values.size()) m.assign(p.values.size(), 0.0f);
    if (v.size() != p.values.size()) v.assign(p.values.size(), 0.0f);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
      p.values[i] = static_cast<float>(p.values[i] - step);
    }
  }
}

}  // namespace selfeq::tensor
