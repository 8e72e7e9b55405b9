#pragma once

// Miniature vision-language model: patch-projection image encoder, token
// embedding text encoder, a stack of text-over-image cross-attention fusion
// blocks, and the matching / masked-token / contrastive heads.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfeq/data.hpp"
#include "selfeq/optim.hpp"
#include "selfeq/tensor.hpp"

namespace selfeq::model {

using tensor::ParameterMap;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_fusion_layers = 3;
  std::size_t ffn_hidden = 128;
  std::size_t vocab_size = 0;
  std::size_t max_text_len = 16;
  int explain_layer = -1;  // negative counts from the end
  float temperature = 0.07f;
  float init_scale = 0.05f;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t n_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t explain_index() const;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Every parameter the model owns, with its shape, in name order.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

// Projections uniform(-init_scale, init_scale) from a per-name substream of
// seed; biases and positional tables zero.
ParameterMap init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Parameters as tensors for one forward pass. With a tape they are leaves on
// it (so activations and attention weights are recorded even when only
// explanation gradients are wanted); without one they are constants.
class BoundParams {
 public:
  BoundParams(const ParameterMap& params, Tape* tape);

  const Tensor& operator[](const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return tensors_; }
  Tape* tape() const { return tape_; }

 private:
  std::map<std::string, Tensor> tensors_;
  Tape* tape_;
};

// P^2 x (patch*patch*3) matrix of flattened patches, row-major over the grid.
Tensor patchify(const data::Image& image, const ModelConfig& cfg);

// Image-side state shared by every text paired with one image: the patch
// embeddings and, per fusion layer and head, K^T (dh x P^2) and V (P^2 x dh).
struct ImageContext {
  Tensor embeddings;
  std::vector<std::vector<Tensor>> keys_t;
  std::vector<std::vector<Tensor>> values;
};

Tensor encode_image(const BoundParams& p, const Tensor& patches, const ModelConfig& cfg);
ImageContext image_context(const BoundParams& p, const Tensor& patches, const ModelConfig& cfg);

// L x d token plus positional embeddings.
Tensor encode_text(const BoundParams& p, const data::TokenizedText& text, const ModelConfig& cfg);

struct FusionTrace {
  Tensor fused_states;                // rows x d
  std::vector<Tensor> attn_weights;   // per layer, (n_heads * rows) x P^2, head-major
  Tensor itm_logits;                  // 1 x 2, index 1 = matched
  Tensor readout_state;               // 1 x d, what the matching head reads
  std::size_t rows = 0;               // text rows carried through fusion
  std::size_t length = 0;             // non-pad tokens including [CLS]
};

struct FuseOptions {
  // Carry only the non-pad rows. Rows never interact inside the fusion
  // stack, so this changes no value that is read downstream.
  bool trim_padding = true;
};

FusionTrace fuse(const BoundParams& p, const ImageContext& image, const Tensor& text_emb, std::size_t length,
                 const ModelConfig& cfg, const FuseOptions& opt = {});

// Convenience: encode + fuse.
FusionTrace forward(const BoundParams& p, const ImageContext& image, const data::TokenizedText& text,
                    const ModelConfig& cfg, const FuseOptions& opt = {});

// 1 x vocab logits from the fused row at position.
Tensor mlm_logits(const BoundParams& p, const FusionTrace& trace, std::size_t position,
                  const data::TokenizedText& text);

struct ItcVectors {
  Tensor image;  // 1 x d, unit norm
  Tensor text;   // 1 x d, unit norm
};

ItcVectors itc_embeddings(const BoundParams& p, const Tensor& image_emb, const Tensor& text_emb, std::size_t length);

// Checkpoint: magic, length-prefixed config JSON, named tensors, FNV-1a trailer.
void save_checkpoint(const ParameterMap& params, const ModelConfig& cfg, const std::filesystem::path& path);
std::string checkpoint_bytes(const ParameterMap& params, const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ParameterMap params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

}  // namespace selfeq::model
