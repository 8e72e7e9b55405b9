#include "selfeq/model.hpp"

#include <cmath>

#include "selfeq/rng.hpp"

namespace selfeq::model {

using namespace tensor;

std::size_t ModelConfig::explain_index() const {
  const auto n = static_cast<int>(n_fusion_layers);
  const int idx = explain_layer < 0 ? n + explain_layer : explain_layer;
  if (idx < 0 || idx >= n) throw ConfigError("model.explain_layer out of range");
  return static_cast<std::size_t>(idx);
}

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("model.image_size must be a positive multiple of model.patch_size");
  }
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model.d_model must be a positive multiple of model.n_heads");
  }
  if (n_fusion_layers == 0) throw ConfigError("model.n_fusion_layers must be positive");
  if (ffn_hidden == 0) throw ConfigError("model.ffn_hidden must be positive");
  if (vocab_size < 5) throw ConfigError("model.vocab_size must cover the reserved tokens");
  if (max_text_len < 2) throw ConfigError("model.max_text_len must be at least 2");
  if (!(temperature > 0.0f)) throw ConfigError("model.temperature must be positive");
  if (!(init_scale >= 0.0f)) throw ConfigError("model.init_scale must be non-negative");
  (void)explain_index();
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"image_size", image_size},     {"patch_size", patch_size},
                        {"d_model", d_model},           {"n_heads", n_heads},
                        {"n_fusion_layers", n_fusion_layers}, {"ffn_hidden", ffn_hidden},
                        {"vocab_size", vocab_size},     {"max_text_len", max_text_len},
                        {"explain_layer", explain_layer}, {"temperature", temperature},
                        {"init_scale", init_scale}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.image_size = j.at("image_size").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_fusion_layers = j.at("n_fusion_layers").get<std::size_t>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_text_len = j.at("max_text_len").get<std::size_t>();
    c.explain_layer = j.at("explain_layer").get<int>();
    c.temperature = j.at("temperature").get<float>();
    c.init_scale = j.at("init_scale").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config record: ") + e.what());
  }
  c.validate();
  return c;
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::map<std::string, Shape> s;
  s["image.patch_proj"] = {c.patch_dim(), d};
  s["image.patch_bias"] = {1, d};
  s["image.pos"] = {c.n_patches(), d};
  s["text.token_emb"] = {c.vocab_size, d};
  s["text.pos"] = {c.max_text_len, d};
  for (std::size_t l = 0; l < c.n_fusion_layers; ++l) {
    const std::string p = "fusion." + std::to_string(l) + ".";
    s[p + "wq"] = {d, d};
    s[p + "wk"] = {d, d};
    s[p + "wv"] = {d, d};
    s[p + "wo"] = {d, d};
    s[p + "ffn_w1"] = {d, c.ffn_hidden};
    s[p + "ffn_b1"] = {1, c.ffn_hidden};
    s[p + "ffn_w2"] = {c.ffn_hidden, d};
    s[p + "ffn_b2"] = {1, d};
  }
  s["head.itm_w"] = {d, 2};
  s["head.itm_b"] = {1, 2};
  s["head.mlm_w"] = {d, c.vocab_size};
  s["head.mlm_b"] = {1, c.vocab_size};
  s["head.itc_image"] = {d, d};
  s["head.itc_text"] = {d, d};
  return s;
}

namespace {

bool zero_init(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".pos") || ends_with("_bias") || ends_with("_b") || ends_with("_b1") || ends_with("_b2");
}

}  // namespace

ParameterMap init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterMap out;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Parameter p{shape, std::vector<float>(element_count(shape), 0.0f)};
    if (!zero_init(name)) {
      Rng rng(substream_seed(seed, std::string_view(name)));
      for (auto& v : p.values) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
    }
    out.emplace(name, std::move(p));
  }
  return out;
}

BoundParams::BoundParams(const ParameterMap& params, Tape* tape) : tape_(tape) {
  for (const auto& [name, p] : params) {
    tensors_.emplace(name, tape ? tape->variable(p.shape, p.values) : Tensor::constant(p.shape, p.values));
  }
}

const Tensor& BoundParams::operator[](const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor patchify(const data::Image& image, const ModelConfig& cfg) {
  if (image.height != cfg.image_size || image.width != cfg.image_size || image.pixels.size() != image.height * image.width * 3) {
    throw ShapeError("encode_image: raster is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", model expects " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t g = cfg.grid(), ps = cfg.patch_size, pd = cfg.patch_dim();
  std::vector<float> out(cfg.n_patches() * pd);
  for (std::size_t py = 0; py < g; ++py) {
    for (std::size_t px = 0; px < g; ++px) {
      float* row = out.data() + (py * g + px) * pd;
      std::size_t k = 0;
      for (std::size_t y = 0; y < ps; ++y) {
        for (std::size_t x = 0; x < ps; ++x) {
          for (std::size_t c = 0; c < 3; ++c) row[k++] = image.at(py * ps + y, px * ps + x, c);
        }
      }
    }
  }
  return Tensor::constant({cfg.n_patches(), pd}, std::move(out));
}

Tensor encode_image(const BoundParams& p, const Tensor& patches, const ModelConfig& cfg) {
  if (patches.rank() != 2 || patches.rows() != cfg.n_patches() || patches.cols() != cfg.patch_dim()) {
    throw ShapeError("encode_image: patches " + shape_str(patches.shape()));
  }
  const Tensor proj = matmul(patches, p["image.patch_proj"]);
  const Tensor bias = expand(p["image.patch_bias"], proj.shape());
  return add(add(proj, bias), p["image.pos"]);
}

ImageContext image_context(const BoundParams& p, const Tensor& patches, const ModelConfig& cfg) {
  ImageContext ctx;
  ctx.embeddings = encode_image(p, patches, cfg);
  const std::size_t dh = cfg.head_dim();
  for (std::size_t l = 0; l < cfg.n_fusion_layers; ++l) {
    const std::string pre = "fusion." + std::to_string(l) + ".";
    const Tensor k = matmul(ctx.embeddings, p[pre + "wk"]);
    const Tensor v = matmul(ctx.embeddings, p[pre + "wv"]);
    std::vector<Tensor> kt, vs;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      kt.push_back(transpose(slice(k, 1, h * dh, (h + 1) * dh)));
      vs.push_back(slice(v, 1, h * dh, (h + 1) * dh));
    }
    ctx.keys_t.push_back(std::move(kt));
    ctx.values.push_back(std::move(vs));
  }
  return ctx;
}

Tensor encode_text(const BoundParams& p, const data::TokenizedText& text, const ModelConfig& cfg) {
  if (text.ids.size() > cfg.max_text_len) {
    throw ShapeError("encode_text: " + std::to_string(text.ids.size()) + " tokens exceed max_text_len " +
                     std::to_string(cfg.max_text_len));
  }
  if (text.ids.empty() || text.ids[0] != data::Vocabulary::kCls) throw ShapeError("encode_text: sequence must start with [CLS]");
  for (std::size_t id : text.ids) {
    if (id >= cfg.vocab_size) throw std::out_of_range("encode_text: token id " + std::to_string(id) + " is outside the vocabulary");
  }
  const Tensor tok = gather_rows(p["text.token_emb"], text.ids);
  const Tensor pos = slice(p["text.pos"], 0, 0, text.ids.size());
  return add(tok, pos);
}

FusionTrace fuse(const BoundParams& p, const ImageContext& image, const Tensor& text_emb, std::size_t length,
                 const ModelConfig& cfg, const FuseOptions& opt) {
  if (text_emb.rank() != 2 || text_emb.cols() != cfg.d_model) throw ShapeError("fuse: text embeddings " + shape_str(text_emb.shape()));
  if (length == 0 || length > text_emb.rows()) throw ShapeError("fuse: pad mask length " + std::to_string(length) +
                                                                " does not fit " + std::to_string(text_emb.rows()) + " rows");
  if (image.keys_t.size() != cfg.n_fusion_layers) throw ShapeError("fuse: image context built for another config");

  FusionTrace tr;
  tr.length = length;
  Tensor x = opt.trim_padding ? slice(text_emb, 0, 0, length) : text_emb;
  tr.rows = x.rows();
  const std::size_t dh = cfg.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  for (std::size_t l = 0; l < cfg.n_fusion_layers; ++l) {
    const std::string pre = "fusion." + std::to_string(l) + ".";
    const Tensor q = matmul(x, p[pre + "wq"]);
    std::vector<Tensor> scores;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      scores.push_back(scalar_mul(matmul(slice(q, 1, h * dh, (h + 1) * dh), image.keys_t[l][h]), scale));
    }
    const Tensor attn = row_softmax(cfg.n_heads == 1 ? scores[0] : concat(scores, 0));
    tr.attn_weights.push_back(attn);
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Tensor a = cfg.n_heads == 1 ? attn : slice(attn, 0, h * tr.rows, (h + 1) * tr.rows);
      heads.push_back(matmul(a, image.values[l][h]));
    }
    const Tensor mixed = cfg.n_heads == 1 ? heads[0] : concat(heads, 1);
    x = add(x, matmul(mixed, p[pre + "wo"]));
    Tensor hidden = matmul(x, p[pre + "ffn_w1"]);
    hidden = relu(add(hidden, expand(p[pre + "ffn_b1"], hidden.shape())));
    Tensor ff = matmul(hidden, p[pre + "ffn_w2"]);
    x = add(x, add(ff, expand(p[pre + "ffn_b2"], ff.shape())));
  }
  tr.fused_states = x;

  // Masked mean over the non-pad fused rows.
  const Tensor live = length == x.rows() ? x : slice(x, 0, 0, length);
  tr.readout_state = scalar_mul(sum_cols(live), 1.0f / static_cast<float>(length));
  tr.itm_logits = add(matmul(tr.readout_state, p["head.itm_w"]), p["head.itm_b"]);
  return tr;
}

FusionTrace forward(const BoundParams& p, const ImageContext& image, const data::TokenizedText& text,
                    const ModelConfig& cfg, const FuseOptions& opt) {
  return fuse(p, image, encode_text(p, text, cfg), text.length, cfg, opt);
}

Tensor mlm_logits(const BoundParams& p, const FusionTrace& trace, std::size_t position, const data::TokenizedText& text) {
  if (position == 0 || position >= trace.length || position >= text.ids.size()) {
    throw std::out_of_range("mlm_logits: position " + std::to_string(position) + " is not a maskable token");
  }
  const Tensor row = gather_rows(trace.fused_states, {position});
  return add(matmul(row, p["head.mlm_w"]), p["head.mlm_b"]);
}

namespace {

Tensor unit_rows(const Tensor& v) {
  const Tensor norm = sqrt(add(sum(square(v)), Tensor::scalar(1e-12f)));
  return div(v, norm);
}

}  // namespace

ItcVectors itc_embeddings(const BoundParams& p, const Tensor& image_emb, const Tensor& text_emb, std::size_t length) {
  if (length == 0 || length > text_emb.rows()) throw ShapeError("itc_embeddings: bad text length");
  const Tensor img_pool = scalar_mul(sum_cols(image_emb), 1.0f / static_cast<float>(image_emb.rows()));
  const Tensor live = length == text_emb.rows() ? text_emb : slice(text_emb, 0, 0, length);
  const Tensor txt_pool = scalar_mul(sum_cols(live), 1.0f / static_cast<float>(length));
  return {unit_rows(matmul(img_pool, p["head.itc_image"])), unit_rows(matmul(txt_pool, p["head.itc_text"]))};
}

}  // namespace selfeq::model
