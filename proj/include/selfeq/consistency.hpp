#pragma once

// Self-consistency losses over a caption/paraphrase pair of attention maps
// and the scheduled composite training loss.

#include <cstddef>
#include <optional>
#include <vector>

#include "selfeq/model.hpp"
#include "selfeq/objectives.hpp"
#include "selfeq/tensor.hpp"

namespace selfeq::consistency {

using tensor::Tensor;

struct SelfEQConfig {
  float k = 0.8f;        // RoI threshold on the sum of both maps
  float lambda = 1.0f;   // weight of the consistency term
  bool use_sim = true;   // ablation switches
  bool use_cst = true;
  // alpha ramps linearly from alpha_start to alpha_end over ramp_epochs
  // of real-valued epoch progress, then stays at alpha_end.
  float alpha_start = 0.0f;
  float alpha_end = 1.0f;
  float ramp_epochs = 2.0f;
  // Differentiate through the pair's normalising maximum.
  bool scale_grad = false;

  float alpha(double progress) const;
  void validate() const;  // throws std::invalid_argument
};

// Mean squared difference over all cells.
Tensor loss_sim(const Tensor& g, const Tensor& ge);

// 1 where g + ge >= k, else 0. A constant.
Tensor roi_mask(const Tensor& g, const Tensor& ge, float k);

struct RoiStats {
  Tensor mean;
  Tensor stddev;
  float count = 0.0f;
};

// Mean and standard deviation of g inside mask; nullopt for an empty mask.
std::optional<RoiStats> roi_stats(const Tensor& g, const Tensor& mask);

// sigma + sigma_e + relu(k/2 - mu) + relu(k/2 - mu_e).
Tensor loss_cst(const RoiStats& a, const RoiStats& b, float k);

struct SelfEQTerms {
  Tensor total;
  Tensor sim;
  Tensor cst;
  bool empty_roi = false;
};

// sim + lambda * cst for pair-normalized maps. The consistency term is an
// exact zero when the RoI is empty or the caller flags a degenerate pair.
SelfEQTerms loss_selfeq(const Tensor& g, const Tensor& ge, const SelfEQConfig& cfg, bool degenerate = false);

// One training row: which image it belongs to and its token sequences.
struct Row {
  const model::ImageContext* image = nullptr;
  data::TokenizedText caption;
  std::optional<data::TokenizedText> paraphrase;
};

struct CompositeOptions {
  bool selfeq = true;  // false: plain L_vl on the captions
  objectives::ObjectiveToggles toggles;
};

struct CompositeResult {
  Tensor loss;
  float alpha = 1.0f;
  float l_vl = 0.0f;
  float l_vl_e = 0.0f;
  float l_sim = 0.0f;
  float l_cst = 0.0f;
  float l_selfeq = 0.0f;
  float itm = 0.0f;
  float mlm = 0.0f;
  float itc = 0.0f;
  std::size_t pairs = 0;
  std::size_t empty_roi_count = 0;
  std::size_t degenerate_count = 0;
};

// alpha * L_vl + (1 - alpha) * (mean L_SelfEQ + L_vl^e). Rows without a
// paraphrase only feed L_vl. rng draws negatives and masked positions.
CompositeResult composite_loss(const model::BoundParams& p, const std::vector<Row>& rows, double progress,
                               const model::ModelConfig& mcfg, const SelfEQConfig& cfg, const CompositeOptions& opt,
                               Rng& rng);

}  // namespace selfeq::consistency
