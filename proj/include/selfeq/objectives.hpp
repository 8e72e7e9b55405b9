#pragma once

// Base vision-language objectives: image-text matching with in-batch
// mismatches, single-token masked prediction, and symmetric contrastive loss.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "selfeq/data.hpp"
#include "selfeq/model.hpp"
#include "selfeq/rng.hpp"
#include "selfeq/tensor.hpp"

namespace selfeq::objectives {

using tensor::Tensor;

class BatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kMismatched = 0;
inline constexpr std::size_t kMatched = 1;

struct ObjectiveToggles {
  bool itm = true;
  bool mlm = true;
  bool itc = true;
};

struct MaskedText {
  data::TokenizedText text;  // copy with [MASK] at position
  std::size_t position = 0;
  std::size_t target = 0;    // original token id
};

// Uniformly random cyclic permutation (Sattolo); p[i] != i for every i.
std::vector<std::size_t> derangement(std::size_t n, Rng& rng);

// Masks one token chosen uniformly among non-pad, non-[CLS] positions.
// Empty when the caption has no such token.
std::optional<MaskedText> mask_one(const data::TokenizedText& text, Rng& rng);

// One mini-batch of texts paired with already-encoded images.
struct Batch {
  std::vector<data::TokenizedText> captions;
  std::vector<std::size_t> negatives;           // image i is paired with caption negatives[i]
  std::vector<std::optional<MaskedText>> masked;

  std::size_t size() const { return captions.size(); }
};

Batch make_batch(std::vector<data::TokenizedText> captions, Rng& rng);

// Mean cross-entropy of n x 2 logits against labels.
Tensor loss_itm_logits(const Tensor& logits, const std::vector<std::size_t>& labels);

// Symmetric InfoNCE over a B x B similarity matrix (diagonal = positives).
Tensor loss_itc_similarity(const Tensor& similarity, float temperature);

// Same, from stacked unit-norm rows.
Tensor loss_itc_vectors(const Tensor& image_rows, const Tensor& text_rows, float temperature);

struct VlResult {
  Tensor itm;
  Tensor mlm;
  Tensor itc;
  Tensor total;
  std::vector<model::FusionTrace> positives;  // (V_i, T_i) traces, one per row
  std::size_t mlm_skipped = 0;
};

// L_vl over a batch; images[i] belongs to row i. Disabled components are
// exact zeros. Throws BatchError when a needed component has B < 2.
VlResult loss_vl(const model::BoundParams& p, const std::vector<const model::ImageContext*>& images,
                 const Batch& batch, const model::ModelConfig& cfg, const ObjectiveToggles& toggles);

}  // namespace selfeq::objectives
