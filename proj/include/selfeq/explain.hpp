#pragma once

// Gradient-weighted attention maps over image patches, pair normalisation,
// bilinear upsampling and PGM export.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "selfeq/data.hpp"
#include "selfeq/model.hpp"
#include "selfeq/tensor.hpp"

namespace selfeq::explain {

using tensor::Tensor;

struct AttentionMap {
  std::size_t grid = 0;       // P; values are P x P row-major
  std::vector<float> values;
  std::string source_text;
  std::size_t layer = 0;
  bool normalized = false;

  float at(std::size_t r, std::size_t c) const { return values[r * grid + c]; }
};

// ReLU(F * -dH/dF) averaged over heads and the text rows 1..length-1.
// attn and d_attn are (n_heads * rows) x P^2; the result is P x P and is
// differentiable when its inputs are.
Tensor map_from_attention(const Tensor& attn, const Tensor& d_attn, std::size_t n_heads, std::size_t rows,
                          std::size_t length, std::size_t grid);

// Maps for several traces recorded on one tape. H_i is the matching
// cross-entropy of trace i against the "matched" label, times loss_scale.
// With create_graph the maps stay differentiable with respect to the
// parameters the traces were computed from.
std::vector<Tensor> live_maps(tensor::Tape& tape, const std::vector<const model::FusionTrace*>& traces,
                              const model::ModelConfig& cfg, bool create_graph, float loss_scale = 1.0f);

// Evaluation-mode map for one (image, caption): fresh tape, detached values.
// Throws std::invalid_argument when the caption has no tokens.
AttentionMap gradcam(const tensor::ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                     const data::Image& image, const std::string& caption, float loss_scale = 1.0f);

// Same for a pair sharing one image (one forward/backward each).
std::pair<AttentionMap, AttentionMap> gradcam_pair(const tensor::ParameterMap& params, const model::ModelConfig& cfg,
                                                   const data::Vocabulary& vocab, const data::Image& image,
                                                   const std::string& caption, const std::string& paraphrase);

struct NormalizedPair {
  Tensor first;
  Tensor second;
  float scale = 0.0f;
  bool degenerate = false;
};

inline constexpr float kDegenerateScale = 1e-8f;

// Divides both maps by the largest entry of the pair. The divisor is held
// constant unless scale_grad, in which case gradients also reach the entry
// that supplied it and the result no longer depends on the maps' magnitude.
NormalizedPair normalize_pair(const Tensor& g, const Tensor& ge, bool scale_grad = false);
// Detached variant for stored maps; sets the normalized flag.
bool normalize_pair(AttentionMap& g, AttentionMap& ge);

// Half-pixel bilinear resampling of the P x P grid to target x target.
std::vector<float> upsample_map(const AttentionMap& map, std::size_t target);
std::vector<float> upsample_grid(const std::vector<float>& grid, std::size_t p, std::size_t target);

// Binary PGM (P5, maxval 255), byte = round(255 * clamp(v, 0, 1)).
void export_map(const std::vector<float>& pixels, std::size_t height, std::size_t width,
                const std::filesystem::path& path);

struct GreyImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> bytes;
};

GreyImage read_pgm(const std::filesystem::path& path);

// Lowercase alphanumerics with runs of anything else collapsed to '_'.
std::string slug(const std::string& caption);
std::string dump_name(const std::string& sample_id, const std::string& caption);

}  // namespace selfeq::explain
