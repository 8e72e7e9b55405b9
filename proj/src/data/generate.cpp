#include <algorithm>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "selfeq/data.hpp"
#include "selfeq/rng.hpp"

namespace selfeq::data {

using nlohmann::json;

json paraphrase_meta_json(const augment::ParaphraseRecord& r) {
  return json{{"group", r.group},       {"synonym", r.synonym},   {"antonym", r.antonym},
              {"hypernym", r.hypernym}, {"meronym", r.meronym}, {"source", augment::source_name(r.source)}};
}

std::string location_phrase(float cx, float cy, int image_size) {
  static const char* const rows[] = {"top", "middle", "bottom"};
  static const char* const cols[] = {"left", "center", "right"};
  auto cell = [&](float v) {
    const int c = static_cast<int>(v * 3.0f / static_cast<float>(image_size));
    return std::clamp(c, 0, 2);
  };
  return std::string(rows[cell(cy)]) + " " + cols[cell(cx)];
}

std::string region_caption(const SceneObject& obj, int image_size, std::string_view shape_noun) {
  return std::string("a ") + color_word(obj.color) + " " + std::string(shape_noun) + " in the " +
         location_phrase(obj.cx, obj.cy, image_size);
}

std::string global_caption(const Scene& scene) {
  std::string out = "a scene with ";
  const std::size_t n = scene.objects.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += (i + 1 == n) ? " and " : ", ";
    out += std::string("a ") + color_word(scene.objects[i].color) + " " + shape_word(scene.objects[i].shape);
  }
  return out;
}

namespace {

constexpr int kPlacementTries = 60;
constexpr int kSceneAttempts = 64;

bool boxes_clear(const BBox& a, const BBox& b) {
  // one free pixel between boxes
  return a.x1 + 1 < b.x0 || b.x1 + 1 < a.x0 || a.y1 + 1 < b.y0 || b.y1 + 1 < a.y0;
}

std::pair<ShapeKind, Color> pick_distractor(Rng& rng, ShapeKind ts, Color tc, const DataConfig& cfg) {
  const double r = rng.uniform();
  auto other_shape = [&] {
    auto s = kShapes[rng.below(kShapes.size() - 1)];
    return s == ts ? kShapes.back() : s;
  };
  auto other_color = [&] {
    auto c = kColors[rng.below(kColors.size() - 1)];
    return c == tc ? kColors.back() : c;
  };
  if (r < cfg.same_color_distractor) return {other_shape(), tc};
  if (r < cfg.same_color_distractor + cfg.same_shape_distractor) return {ts, other_color()};
  for (;;) {
    ShapeKind s = kShapes[rng.below(kShapes.size())];
    Color c = kColors[rng.below(kColors.size())];
    if (s != ts || c != tc) return {s, c};
  }
}

std::optional<Scene> try_scene(Rng& rng, const DataConfig& cfg) {
  Scene scene;
  scene.image_size = cfg.image_size;
  const float grey = rng.uniform(0.05f, 0.30f);
  scene.background = {grey, grey, grey};
  const int n_obj = cfg.min_objects + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_objects - cfg.min_objects + 1)));
  const ShapeKind ts = kShapes[rng.below(kShapes.size())];
  const Color tc = kColors[rng.below(kColors.size())];
  for (int i = 0; i < n_obj; ++i) {
    SceneObject obj;
    if (i == 0) {
      obj.shape = ts;
      obj.color = tc;
    } else {
      std::tie(obj.shape, obj.color) = pick_distractor(rng, ts, tc, cfg);
    }
    bool placed = false;
    for (int t = 0; t < kPlacementTries && !placed; ++t) {
      obj.size = rng.uniform(cfg.min_size, cfg.max_size);
      const float lo = obj.size + 0.5f;
      const float hi = static_cast<float>(cfg.image_size) - obj.size - 0.5f;
      obj.cx = rng.uniform(lo, hi);
      obj.cy = rng.uniform(lo, hi);
      obj.bbox = shape_bbox(obj, cfg.image_size);
      placed = std::all_of(scene.objects.begin(), scene.objects.end(),
                           [&](const SceneObject& o) { return boxes_clear(o.bbox, obj.bbox); });
    }
    if (!placed) return std::nullopt;
    scene.objects.push_back(obj);
  }
  return scene;
}

Scene make_scene(std::uint64_t stream_seed, const DataConfig& cfg) {
  for (int attempt = 0; attempt < kSceneAttempts; ++attempt) {
    Rng rng(substream_seed(stream_seed, static_cast<std::uint64_t>(attempt)));
    if (auto s = try_scene(rng, cfg)) return *s;
  }
  throw DatasetError("could not place objects; loosen data.max_objects or data.max_size");
}

void validate(const DataConfig& cfg) {
  if (cfg.image_size < 16) throw DatasetError("data.image_size must be at least 16");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects || cfg.max_objects > 4) {
    throw DatasetError("object count range must satisfy 1 <= min <= max <= 4");
  }
  if (cfg.min_size < 2.0f || cfg.max_size < cfg.min_size || 2.0f * cfg.max_size + 2.0f > cfg.image_size) {
    throw DatasetError("object size range does not fit the image");
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(cfg.global_fraction) || !prob(cfg.paraphrase_fraction) || !prob(cfg.same_color_distractor) ||
      !prob(cfg.same_shape_distractor) || cfg.same_color_distractor + cfg.same_shape_distractor > 1.0) {
    throw DatasetError("data fractions must lie in [0, 1]");
  }
  if (cfg.paraphrase_fraction > 1.0 - cfg.global_fraction + 1e-12) {
    throw DatasetError("data.paraphrase_fraction cannot exceed the region-caption fraction");
  }
}

GeneratedSample make_sample(std::uint64_t seed, Split split, std::size_t index, const DataConfig& cfg,
                            const augment::Lexicon& lexicon) {
  static const char* const prefix[] = {"train", "seen", "heldout"};
  char id[32];
  std::snprintf(id, sizeof id, "%s-%05zu", prefix[static_cast<int>(split)], index);
  const std::uint64_t stream = substream_seed(seed, std::string_view(id));

  GeneratedSample g;
  g.scene = make_scene(substream_seed(stream, "scene"), cfg);
  g.image = render_scene(g.scene);
  g.target = 0;
  Rng rng(substream_seed(stream, "caption"));

  Sample& s = g.sample;
  s.sample_id = id;
  s.image = s.sample_id + ".rgb";
  s.split = split;
  const SceneObject& target = g.scene.objects[0];
  const std::string canonical = region_caption(target, cfg.image_size, shape_word(target.shape));

  if (split == Split::Train) {
    const bool global = rng.bernoulli(cfg.global_fraction);
    if (global) {
      s.caption_kind = CaptionKind::Global;
      s.caption = global_caption(g.scene);
    } else {
      s.caption_kind = CaptionKind::Region;
      s.caption = canonical;
      const double region_share = 1.0 - cfg.global_fraction;
      if (region_share > 0.0 && rng.bernoulli(cfg.paraphrase_fraction / region_share)) {
        if (auto r = augment::paraphrase(s.caption, lexicon, rng.next())) {
          s.paraphrase = r.record->paraphrase;
          s.paraphrase_meta = paraphrase_meta_json(*r.record);
        }
      }
    }
    return g;
  }

  s.caption_kind = CaptionKind::Region;
  s.gt_bbox = target.bbox;
  if (split == Split::EvalSeen) {
    s.caption = canonical;
    if (auto r = augment::paraphrase(s.caption, lexicon, rng.next())) {
      s.paraphrase = r.record->paraphrase;
      s.paraphrase_meta = paraphrase_meta_json(*r.record);
    }
    return g;
  }

  // Held-out: the caption names the target by a synonym only ever seen in
  // training paraphrases; its own paraphrase goes back to the canonical noun.
  const auto* entry = lexicon.find(shape_word(target.shape));
  if (entry == nullptr || entry->synonyms.empty()) {
    throw DatasetError(std::string("lexicon has no synonyms for '") + shape_word(target.shape) + "'");
  }
  const std::string& syn = entry->synonyms[rng.below(entry->synonyms.size())];
  s.caption = region_caption(target, cfg.image_size, syn);
  augment::ParaphraseRecord rec;
  rec.source_text = s.caption;
  rec.group = syn;
  rec.synonym = shape_word(target.shape);
  if (const auto* se = lexicon.find(syn)) {
    if (!se->antonyms.empty()) rec.antonym = se->antonyms.front();
    if (!se->hypernyms.empty()) rec.hypernym = se->hypernyms.front();
    if (!se->meronyms.empty()) rec.meronym = se->meronyms.front();
  }
  rec.paraphrase = canonical;
  s.paraphrase = canonical;
  s.paraphrase_meta = paraphrase_meta_json(rec);
  return g;
}

}  // namespace

std::vector<GeneratedSample> generate_samples(std::uint64_t seed, std::size_t n_train, std::size_t n_eval,
                                              const DataConfig& config, const augment::Lexicon& lexicon) {
  if (n_train < 1) throw DatasetError("n_train must be at least 1");
  validate(config);
  std::vector<GeneratedSample> out;
  out.reserve(n_train + 2 * n_eval);
  for (std::size_t i = 0; i < n_train; ++i) out.push_back(make_sample(seed, Split::Train, i, config, lexicon));
  for (std::size_t i = 0; i < n_eval; ++i) out.push_back(make_sample(seed, Split::EvalSeen, i, config, lexicon));
  for (std::size_t i = 0; i < n_eval; ++i) out.push_back(make_sample(seed, Split::EvalHeldout, i, config, lexicon));
  return out;
}

void write_generated(const std::vector<GeneratedSample>& samples, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<Sample> rows;
  rows.reserve(samples.size());
  for (const auto& g : samples) {
    write_raster(g.image, dir / g.sample.image);
    rows.push_back(g.sample);
  }
  write_dataset(rows, dir / "dataset.jsonl");
}

}  // namespace selfeq::data
