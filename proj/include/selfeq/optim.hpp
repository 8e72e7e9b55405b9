#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selfeq/tensor.hpp"

namespace selfeq::tensor {

struct Parameter {
  Shape shape;
  std::vector<float> values;
};

// Name-ordered so iteration (and therefore serialization) is deterministic.
using ParameterMap = std::map<std::string, Parameter>;
using GradientMap = std::map<std::string, std::vector<float>>;

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::int64_t step_count = 0;
  // Adam moments, keyed like the parameters and shaped like them.
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
};

// SGD: p <- p - lr * g. Adam: bias-corrected first/second moment update.
// Throws std::invalid_argument when a parameter has no gradient.
void optimizer_step(OptimizerState& state, ParameterMap& params, const GradientMap& grads);

}  // namespace selfeq::tensor
