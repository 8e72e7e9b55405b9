#include "selfeq/objectives.hpp"

namespace selfeq::objectives {

using namespace tensor;

std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw BatchError("a batch of size < 2 cannot form mismatched pairs");
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i)]);
  return p;
}

std::optional<MaskedText> mask_one(const data::TokenizedText& text, Rng& rng) {
  if (text.length < 2) return std::nullopt;
  MaskedText m;
  m.text = text;
  m.position = 1 + rng.below(text.length - 1);
  m.target = text.ids[m.position];
  m.text.ids[m.position] = data::Vocabulary::kMask;
  return m;
}

Batch make_batch(std::vector<data::TokenizedText> captions, Rng& rng) {
  Batch b;
  b.captions = std::move(captions);
  if (b.captions.size() >= 2) b.negatives = derangement(b.captions.size(), rng);
  for (const auto& c : b.captions) b.masked.push_back(mask_one(c, rng));
  return b;
}

Tensor loss_itm_logits(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.cols() != 2) throw ShapeError("loss_itm: logits must be n x 2, got " + shape_str(logits.shape()));
  return cross_entropy_with_logits(logits, labels);
}

Tensor loss_itc_similarity(const Tensor& similarity, float temperature) {
  if (similarity.rank() != 2 || similarity.rows() != similarity.cols()) {
    throw ShapeError("loss_itc: similarity must be square, got " + shape_str(similarity.shape()));
  }
  const std::size_t b = similarity.rows();
  if (b < 2) throw BatchError("loss_itc needs a batch of at least 2");
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  const Tensor scaled = scalar_mul(similarity, 1.0f / temperature);
  const Tensor i2t = cross_entropy_with_logits(scaled, diag);
  const Tensor t2i = cross_entropy_with_logits(transpose(scaled), diag);
  return scalar_mul(add(i2t, t2i), 0.5f);
}

Tensor loss_itc_vectors(const Tensor& image_rows, const Tensor& text_rows, float temperature) {
  return loss_itc_similarity(matmul(image_rows, transpose(text_rows)), temperature);
}

VlResult loss_vl(const model::BoundParams& p, const std::vector<const model::ImageContext*>& images, const Batch& batch,
                 const model::ModelConfig& cfg, const ObjectiveToggles& toggles) {
  const std::size_t n = batch.size();
  if (images.size() != n) throw BatchError("loss_vl: image and caption counts differ");
  if (n == 0) throw BatchError("loss_vl: empty batch");
  VlResult r;
  r.itm = r.mlm = r.itc = Tensor::scalar(0.0f);

  std::vector<Tensor> text_emb;
  text_emb.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    text_emb.push_back(model::encode_text(p, batch.captions[i], cfg));
    r.positives.push_back(model::fuse(p, *images[i], text_emb[i], batch.captions[i].length, cfg));
  }

  if (toggles.itm) {
    if (n < 2 || batch.negatives.size() != n) throw BatchError("loss_itm needs a batch of at least 2 with negatives");
    std::vector<Tensor> logits;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      logits.push_back(r.positives[i].itm_logits);
      labels.push_back(kMatched);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = batch.negatives[i];
      logits.push_back(model::fuse(p, *images[i], text_emb[j], batch.captions[j].length, cfg).itm_logits);
      labels.push_back(kMismatched);
    }
    r.itm = loss_itm_logits(concat(logits, 0), labels);
  }

  if (toggles.mlm) {
    std::vector<Tensor> logits;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = batch.masked.size() == n ? batch.masked[i] : std::nullopt;
      if (!m) {
        ++r.mlm_skipped;
        continue;
      }
      const model::FusionTrace tr = model::forward(p, *images[i], m->text, cfg);
      logits.push_back(model::mlm_logits(p, tr, m->position, m->text));
      targets.push_back(m->target);
    }
    if (!logits.empty()) r.mlm = cross_entropy_with_logits(concat(logits, 0), targets);
  }

  if (toggles.itc) {
    if (n < 2) throw BatchError("loss_itc needs a batch of at least 2");
    std::vector<Tensor> img_rows, txt_rows;
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = model::itc_embeddings(p, images[i]->embeddings, text_emb[i], batch.captions[i].length);
      img_rows.push_back(v.image);
      txt_rows.push_back(v.text);
    }
    r.itc = loss_itc_vectors(concat(img_rows, 0), concat(txt_rows, 0), cfg.temperature);
  }

  r.total = add(add(r.itm, r.mlm), r.itc);
  return r;
}

}  // namespace selfeq::objectives
