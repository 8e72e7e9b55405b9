#pragma once

// Two free 4x4 maps optimised directly against the similarity term alone and
// against the full consistency objective, from one shared random start.

#include <algorithm>
#include <cstdint>

#include "selfeq/consistency.hpp"
#include "selfeq/optim.hpp"
#include "selfeq/rng.hpp"
#include "selfeq/tensor.hpp"

namespace selfeq::testing {

struct TrivialSolutionResult {
  double sim_only_max = 0.0;     // largest entry of either map after sim-only training
  double sim_only_gap = 0.0;     // largest |a - b| after sim-only training
  double selfeq_roi_mean = 0.0;  // smaller of the two RoI means after full training
  double selfeq_max = 0.0;
};

struct FreeMaps {
  tensor::ParameterMap maps;
  tensor::OptimizerState opt;
};

inline FreeMaps free_maps(std::uint64_t seed) {
  Rng rng(seed);
  FreeMaps f;
  for (const char* name : {"a", "b"}) {
    tensor::Parameter p{{4, 4}, std::vector<float>(16)};
    for (auto& v : p.values) v = rng.uniform(0.0f, 1.0f);
    f.maps[name] = p;
  }
  f.opt.kind = tensor::OptimizerKind::Adam;
  f.opt.learning_rate = 0.01f;
  return f;
}

// Maps live in [0, 1] like pair-normalised explanations, so each update is
// projected back onto that box.
template <typename LossFn>
void optimise_maps(FreeMaps& f, int steps, LossFn loss) {
  for (int s = 0; s < steps; ++s) {
    tensor::Tape tape;
    const auto a = tape.variable(f.maps["a"].shape, f.maps["a"].values);
    const auto b = tape.variable(f.maps["b"].shape, f.maps["b"].values);
    const auto g = tape.grad(loss(a, b), {a, b});
    tensor::GradientMap grads{{"a", g[0].to_vector()}, {"b", g[1].to_vector()}};
    tensor::optimizer_step(f.opt, f.maps, grads);
    for (auto& [_, p] : f.maps) {
      for (auto& v : p.values) v = std::clamp(v, 0.0f, 1.0f);
    }
  }
}

inline TrivialSolutionResult trivial_solution_run(std::uint64_t seed, int steps = 500) {
  TrivialSolutionResult r;
  const consistency::SelfEQConfig cfg;

  FreeMaps sim = free_maps(seed);
  optimise_maps(sim, steps, [](const tensor::Tensor& a, const tensor::Tensor& b) { return consistency::loss_sim(a, b); });
  for (std::size_t i = 0; i < 16; ++i) {
    const float x = sim.maps["a"].values[i], y = sim.maps["b"].values[i];
    r.sim_only_max = std::max<double>({r.sim_only_max, x, y});
    r.sim_only_gap = std::max<double>(r.sim_only_gap, std::fabs(x - y));
  }

  FreeMaps full = free_maps(seed);
  optimise_maps(full, steps, [&](const tensor::Tensor& a, const tensor::Tensor& b) {
    return consistency::loss_selfeq(a, b, cfg).total;
  });
  const auto a = tensor::Tensor::constant({4, 4}, full.maps["a"].values);
  const auto b = tensor::Tensor::constant({4, 4}, full.maps["b"].values);
  const auto mask = consistency::roi_mask(a, b, cfg.k);
  const auto sa = consistency::roi_stats(a, mask), sb = consistency::roi_stats(b, mask);
  r.selfeq_roi_mean = (sa && sb) ? std::min(sa->mean.item(), sb->mean.item()) : 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    r.selfeq_max = std::max<double>({r.selfeq_max, full.maps["a"].values[i], full.maps["b"].values[i]});
  }
  return r;
}

}  // namespace selfeq::testing
