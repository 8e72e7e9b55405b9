#include "selfeq/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "selfeq/explain.hpp"

namespace selfeq::consistency {

using namespace tensor;

float SelfEQConfig::alpha(double progress) const {
  if (ramp_epochs <= 0.0f) return alpha_end;
  const double t = std::clamp(progress / ramp_epochs, 0.0, 1.0);
  return static_cast<float>(alpha_start + (alpha_end - alpha_start) * t);
}

void SelfEQConfig::validate() const {
  if (!(k > 0.0f && k < 2.0f)) throw std::invalid_argument("selfeq.k must lie in (0, 2)");
  if (!(lambda >= 0.0f)) throw std::invalid_argument("selfeq.lambda must be >= 0");
  for (float a : {alpha_start, alpha_end}) {
    if (!(a >= 0.0f && a <= 1.0f)) throw std::invalid_argument("selfeq.alpha_start/alpha_end must lie in [0, 1]");
  }
  if (!(ramp_epochs >= 0.0f)) throw std::invalid_argument("selfeq.ramp_epochs must be >= 0");
}

Tensor loss_sim(const Tensor& g, const Tensor& ge) {
  if (g.shape() != ge.shape()) throw ShapeError("loss_sim: " + shape_str(g.shape()) + " vs " + shape_str(ge.shape()));
  return mean(square(sub(g, ge)));
}

Tensor roi_mask(const Tensor& g, const Tensor& ge, float k) {
  if (g.shape() != ge.shape()) throw ShapeError("roi_mask: " + shape_str(g.shape()) + " vs " + shape_str(ge.shape()));
  std::vector<float> m(g.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g[i] + ge[i] >= k ? 1.0f : 0.0f;
  return Tensor::constant(g.shape(), std::move(m));
}

std::optional<RoiStats> roi_stats(const Tensor& g, const Tensor& mask) {
  if (g.shape() != mask.shape()) throw ShapeError("roi_stats: map and mask shapes differ");
  const Tensor m = detach(mask);
  float count = 0.0f;
  for (float v : m.data()) count += v;
  if (count <= 0.0f) return std::nullopt;
  const float inv = 1.0f / count;
  const Tensor r = mul(g, m);
  RoiStats s;
  s.count = count;
  s.mean = scalar_mul(sum(r), inv);
  const Tensor centred = sub(r, expand(s.mean, r.shape()));
  s.stddev = sqrt(scalar_mul(sum(mul(m, square(centred))), inv));
  return s;
}

Tensor loss_cst(const RoiStats& a, const RoiStats& b, float k) {
  const Tensor half = Tensor::scalar(0.5f * k);
  return add(add(a.stddev, b.stddev), add(relu(sub(half, a.mean)), relu(sub(half, b.mean))));
}

SelfEQTerms loss_selfeq(const Tensor& g, const Tensor& ge, const SelfEQConfig& cfg, bool degenerate) {
  SelfEQTerms t;
  t.sim = loss_sim(g, ge);
  t.cst = Tensor::scalar(0.0f);
  if (degenerate) {
    t.empty_roi = true;
  } else {
    const Tensor m = roi_mask(g, ge, cfg.k);
    const auto a = roi_stats(g, m);
    const auto b = roi_stats(ge, m);
    if (a && b) {
      t.cst = loss_cst(*a, *b, cfg.k);
    } else {
      t.empty_roi = true;
    }
  }
  const Tensor zero = Tensor::scalar(0.0f);
  t.total = add(cfg.use_sim ? t.sim : zero, cfg.use_cst ? scalar_mul(t.cst, cfg.lambda) : zero);
  return t;
}

namespace {

objectives::VlResult vl_over(const model::BoundParams& p, const std::vector<const model::ImageContext*>& images,
                             std::vector<data::TokenizedText> texts, const model::ModelConfig& mcfg,
                             const objectives::ObjectiveToggles& toggles, Rng& rng) {
  const objectives::Batch batch = objectives::make_batch(std::move(texts), rng);
  return objectives::loss_vl(p, images, batch, mcfg, toggles);
}

}  // namespace

CompositeResult composite_loss(const model::BoundParams& p, const std::vector<Row>& rows, double progress,
                               const model::ModelConfig& mcfg, const SelfEQConfig& cfg, const CompositeOptions& opt,
                               Rng& rng) {
  if (rows.empty()) throw objectives::BatchError("composite_loss: empty batch");
  CompositeResult out;
  out.alpha = opt.selfeq ? cfg.alpha(progress) : 1.0f;

  std::vector<const model::ImageContext*> images;
  std::vector<data::TokenizedText> texts;
  for (const auto& r : rows) {
    images.push_back(r.image);
    texts.push_back(r.caption);
  }
  const objectives::VlResult vl = vl_over(p, images, texts, mcfg, opt.toggles, rng);
  out.l_vl = vl.total.item();
  out.itm = vl.itm.item();
  out.mlm = vl.mlm.item();
  out.itc = vl.itc.item();
  if (out.alpha >= 1.0f) {
    out.loss = vl.total;
    return out;
  }

  std::vector<std::size_t> paired;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].paraphrase) paired.push_back(i);
  }
  Tensor extra = Tensor::scalar(0.0f);
  if (!paired.empty()) {
    if (p.tape() == nullptr) throw std::invalid_argument("composite_loss: parameters are not bound to a tape");
    std::vector<const model::ImageContext*> e_images;
    std::vector<data::TokenizedText> e_texts;
    for (std::size_t i : paired) {
      e_images.push_back(rows[i].image);
      e_texts.push_back(*rows[i].paraphrase);
    }
    std::vector<model::FusionTrace> e_traces;
    if (paired.size() >= 2) {
      objectives::VlResult vle = vl_over(p, e_images, e_texts, mcfg, opt.toggles, rng);
      out.l_vl_e = vle.total.item();
      extra = vle.total;
      e_traces = std::move(vle.positives);
    } else {
      e_traces.push_back(model::forward(p, *e_images[0], e_texts[0], mcfg));
    }

    std::vector<const model::FusionTrace*> traces;
    for (std::size_t i : paired) traces.push_back(&vl.positives[i]);
    for (const auto& t : e_traces) traces.push_back(&t);
    const std::vector<Tensor> maps = explain::live_maps(*p.tape(), traces, mcfg, true);

    Tensor selfeq_sum = Tensor::scalar(0.0f);
    double sim_sum = 0.0, cst_sum = 0.0;
    const std::size_t n = paired.size();
    for (std::size_t j = 0; j < n; ++j) {
      const explain::NormalizedPair np = explain::normalize_pair(maps[j], maps[n + j], cfg.scale_grad);
      if (np.degenerate) ++out.degenerate_count;
      const SelfEQTerms terms = loss_selfeq(np.first, np.second, cfg, np.degenerate);
      if (terms.empty_roi) ++out.empty_roi_count;
      selfeq_sum = add(selfeq_sum, terms.total);
      sim_sum += terms.sim.item();
      cst_sum += terms.cst.item();
    }
    const float inv = 1.0f / static_cast<float>(n);
    const Tensor selfeq_mean = scalar_mul(selfeq_sum, inv);
    out.pairs = n;
    out.l_sim = static_cast<float>(sim_sum / n);
    out.l_cst = static_cast<float>(cst_sum / n);
    out.l_selfeq = selfeq_mean.item();
    extra = add(extra, selfeq_mean);
  }
  out.loss = add(scalar_mul(vl.total, out.alpha), scalar_mul(extra, 1.0f - out.alpha));
  return out;
}

}  // namespace selfeq::consistency
