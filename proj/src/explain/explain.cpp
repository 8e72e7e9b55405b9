#include "selfeq/explain.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "selfeq/objectives.hpp"

namespace selfeq::explain {

using namespace tensor;

Tensor map_from_attention(const Tensor& attn, const Tensor& d_attn, std::size_t n_heads, std::size_t rows,
                          std::size_t length, std::size_t grid) {
  if (attn.shape() != d_attn.shape()) throw ShapeError("map_from_attention: attention and gradient shapes differ");
  if (attn.rank() != 2 || attn.rows() != n_heads * rows || attn.cols() != grid * grid) {
    throw ShapeError("map_from_attention: attention " + shape_str(attn.shape()) + " does not match heads/rows/grid");
  }
  if (length < 2 || length > rows) throw std::invalid_argument("empty caption after tokenization");
  const Tensor weighted = relu(mul(attn, scalar_mul(d_attn, -1.0f)));
  std::vector<std::size_t> keep;
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t t = 1; t < length; ++t) keep.push_back(h * rows + t);
  }
  const float inv = 1.0f / static_cast<float>(keep.size());
  const Tensor pooled = scalar_mul(sum_cols(gather_rows(weighted, std::move(keep))), inv);
  return reshape(pooled, {grid, grid});
}

std::vector<Tensor> live_maps(Tape& tape, const std::vector<const model::FusionTrace*>& traces,
                              const model::ModelConfig& cfg, bool create_graph, float loss_scale) {
  if (traces.empty()) return {};
  const std::size_t layer = cfg.explain_index();
  // H_i only depends on trace i, so one backward of the sum gives every dH_i/dF_i.
  Tensor total;
  std::vector<Tensor> targets;
  for (const auto* tr : traces) {
    const Tensor h = scalar_mul(objectives::loss_itm_logits(tr->itm_logits, {objectives::kMatched}), loss_scale);
    total = total.defined() ? add(total, h) : h;
    targets.push_back(tr->attn_weights.at(layer));
  }
  if (!total.requires_grad()) throw std::invalid_argument("live_maps: traces are not recorded on a tape");
  const std::vector<Tensor> grads = tape.grad(total, targets, create_graph);
  std::vector<Tensor> maps;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    maps.push_back(map_from_attention(targets[i], grads[i], cfg.n_heads, traces[i]->rows, traces[i]->length, cfg.grid()));
  }
  return maps;
}

namespace {

AttentionMap to_map(const Tensor& t, const std::string& text, std::size_t layer, std::size_t grid) {
  AttentionMap m;
  m.grid = grid;
  m.values = t.to_vector();
  m.source_text = text;
  m.layer = layer;
  return m;
}

std::vector<AttentionMap> maps_for(const ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                                   const data::Image& image, const std::vector<std::string>& captions, float loss_scale) {
  Tape tape;
  const model::BoundParams p(params, &tape);
  const model::ImageContext ctx = model::image_context(p, model::patchify(image, cfg), cfg);
  std::vector<model::FusionTrace> traces;
  for (const auto& c : captions) {
    const auto text = vocab.tokenize(c, cfg.max_text_len);
    if (text.length < 2) throw std::invalid_argument("empty caption after tokenization: '" + c + "'");
    traces.push_back(model::forward(p, ctx, text, cfg));
  }
  std::vector<const model::FusionTrace*> ptrs;
  for (const auto& t : traces) ptrs.push_back(&t);
  const auto live = live_maps(tape, ptrs, cfg, false, loss_scale);
  std::vector<AttentionMap> out;
  for (std::size_t i = 0; i < live.size(); ++i) out.push_back(to_map(live[i], captions[i], cfg.explain_index(), cfg.grid()));
  return out;
}

}  // namespace

AttentionMap gradcam(const ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                     const data::Image& image, const std::string& caption, float loss_scale) {
  return maps_for(params, cfg, vocab, image, {caption}, loss_scale).front();
}

std::pair<AttentionMap, AttentionMap> gradcam_pair(const ParameterMap& params, const model::ModelConfig& cfg,
                                                   const data::Vocabulary& vocab, const data::Image& image,
                                                   const std::string& caption, const std::string& paraphrase) {
  auto maps = maps_for(params, cfg, vocab, image, {caption, paraphrase}, 1.0f);
  return {std::move(maps[0]), std::move(maps[1])};
}

NormalizedPair normalize_pair(const Tensor& g, const Tensor& ge, bool scale_grad) {
  if (g.shape() != ge.shape()) throw ShapeError("normalize_pair: " + shape_str(g.shape()) + " vs " + shape_str(ge.shape()));
  float s = 0.0f;
  for (float v : g.data()) s = std::max(s, v);
  for (float v : ge.data()) s = std::max(s, v);
  NormalizedPair out;
  out.scale = s;
  if (!(s > kDegenerateScale)) {
    out.degenerate = true;
    out.first = Tensor::zeros(g.shape());
    out.second = Tensor::zeros(ge.shape());
    return out;
  }
  if (!scale_grad) {
    out.first = scalar_mul(g, 1.0f / s);
    out.second = scalar_mul(ge, 1.0f / s);
    return out;
  }
  // First occurrence of the maximum, counted across g then ge.
  const auto flat = concat({reshape(g, {g.size(), 1}), reshape(ge, {ge.size(), 1})}, 0);
  std::size_t at = 0;
  for (std::size_t i = 1; i < flat.size(); ++i) {
    if (flat[i] > flat[at]) at = i;
  }
  const Tensor divisor = reshape(gather_rows(flat, {at}), {});
  out.first = div(g, expand(divisor, g.shape()));
  out.second = div(ge, expand(divisor, ge.shape()));
  return out;
}

bool normalize_pair(AttentionMap& g, AttentionMap& ge) {
  if (g.grid != ge.grid || g.values.size() != ge.values.size()) throw ShapeError("normalize_pair: map sizes differ");
  const auto shape = Shape{g.grid, g.grid};
  const NormalizedPair n = normalize_pair(Tensor::constant(shape, g.values), Tensor::constant(shape, ge.values));
  g.values = n.first.to_vector();
  ge.values = n.second.to_vector();
  g.normalized = ge.normalized = true;
  return n.degenerate;
}

std::vector<float> upsample_grid(const std::vector<float>& grid, std::size_t p, std::size_t target) {
  if (grid.size() != p * p) throw ShapeError("upsample_map: grid holds " + std::to_string(grid.size()) + " values, expected P^2");
  if (target < p) throw std::invalid_argument("upsample_map: target size smaller than the grid");
  std::vector<float> out(target * target);
  const double ratio = static_cast<double>(p) / static_cast<double>(target);
  auto coord = [&](std::size_t i, std::size_t& lo, std::size_t& hi, double& frac) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(p - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, p - 1);
    frac = src - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < target; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, y0, y1, fy);
    for (std::size_t x = 0; x < target; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, x0, x1, fx);
      const double top = grid[y0 * p + x0] * (1.0 - fx) + grid[y0 * p + x1] * fx;
      const double bottom = grid[y1 * p + x0] * (1.0 - fx) + grid[y1 * p + x1] * fx;
      out[y * target + x] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
    }
  }
  return out;
}

std::vector<float> upsample_map(const AttentionMap& map, std::size_t target) {
  return upsample_grid(map.values, map.grid, target);
}

void export_map(const std::vector<float>& pixels, std::size_t height, std::size_t width, const std::filesystem::path& path) {
  if (pixels.size() != height * width) throw ShapeError("export_map: pixel count does not match size");
  std::string bytes = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  bytes.reserve(bytes.size() + pixels.size());
  for (float v : pixels) {
    const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0f * c))));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data::IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw data::IoError("write failed for " + path.string());
}

GreyImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data::IoError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (!f || magic != "P5" || maxval != 255) throw data::IoError(path.string() + " is not an 8-bit P5 PGM");
  f.get();  // single whitespace after maxval
  GreyImage img{h, w, std::vector<unsigned char>(w * h)};
  f.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.bytes.size())) throw data::IoError(path.string() + " is truncated");
  return img;
}

std::string slug(const std::string& caption) {
  std::string out;
  bool gap = false;
  for (char ch : caption) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      if (gap && !out.empty()) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(c)));
      gap = false;
    } else {
      gap = true;
    }
  }
  if (out.size() > 80) out.resize(80);
  return out.empty() ? "empty" : out;
}

std::string dump_name(const std::string& sample_id, const std::string& caption) {
  return sample_id + "__" + slug(caption) + ".pgm";
}

}  // namespace selfeq::explain
