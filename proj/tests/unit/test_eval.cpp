#include <algorithm>
#include <fstream>
#include <sstream>

#include "../support/world.hpp"
#include "doctest.h"
#include "selfeq/eval.hpp"
#include "selfeq/explain.hpp"
#include "selfeq/rng.hpp"

using namespace selfeq;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct EvalWorld {
  testing::TempDir dir{"eval"};
  data::Vocabulary vocab = data::build_vocabulary(testing::bundled_lexicon());
  model::ModelConfig cfg = testing::small_model_config(vocab.size());
  tensor::ParameterMap params = model::init_parameters(cfg, 11);
  data::Dataset ds;

  EvalWorld() {
    testing::write_small_dataset(dir.path(), 3, 6, 8);
    ds = data::open_dataset(dir.path(), 32);
  }
};

}  // namespace

TEST_CASE("pointing_hit worked examples") {
  const data::BBox box{2, 1, 3, 2};
  std::vector<float> m(5 * 5, 0.0f);
  m[2 * 5 + 3] = 1.0f;
  auto r = eval::pointing_hit(m, 5, 5, box);
  CHECK(r.hit);
  CHECK(r.x == 3);
  CHECK(r.y == 2);
  CHECK_FALSE(r.degenerate);

  std::fill(m.begin(), m.end(), 0.0f);
  m[4 * 5 + 4] = 1.0f;
  CHECK_FALSE(eval::pointing_hit(m, 5, 5, box).hit);

  const std::vector<float> flat(25, 0.3f);
  r = eval::pointing_hit(flat, 5, 5, box);
  CHECK_FALSE(r.hit);
  CHECK(r.x == 0);
  CHECK(r.y == 0);
  CHECK(r.degenerate);
  CHECK(eval::pointing_hit(flat, 5, 5, data::BBox{0, 0, 1, 1}).hit);

  // Ties resolve to the lowest row-major index.
  std::vector<float> tie(25, 0.0f);
  tie[7] = tie[13] = 2.0f;
  r = eval::pointing_hit(tie, 5, 5, box);
  CHECK(r.x == 2);
  CHECK(r.y == 1);
  CHECK_THROWS(eval::pointing_hit(tie, 4, 5, box));
}

TEST_CASE("pointing_hit is invariant to strictly monotone rescaling") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> m(64);
    for (auto& v : m) v = rng.uniform(0.0f, 1.0f);
    const data::BBox box{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)), 4 + static_cast<int>(rng.below(4)),
                         4 + static_cast<int>(rng.below(4))};
    const auto base = eval::pointing_hit(m, 8, 8, box);
    std::vector<float> warped(m.size());
    std::transform(m.begin(), m.end(), warped.begin(), [](float v) { return 3.0f * v * v * v + 0.5f; });
    const auto w = eval::pointing_hit(warped, 8, 8, box);
    CHECK(w.hit == base.hit);
    CHECK(w.x == base.x);
    CHECK(w.y == base.y);
  }
}

TEST_CASE("summary arithmetic and recompute from records") {
  std::vector<eval::SampleRecord> recs(4);
  for (int i = 0; i < 4; ++i) {
    recs[i].sample_id = "s" + std::to_string(3 - i);
    recs[i].hit = i % 2 == 0;
  }
  recs[0].pair_mse = 0.5;
  recs[0].argmax_agree = true;
  recs[1].pair_mse = 0.1;
  recs[1].argmax_agree = false;
  const auto r = eval::summarize("eval_seen", recs);
  CHECK(r.accuracy == 0.5);
  CHECK(r.n_hits == 2);
  CHECK(r.n_total == 4);
  CHECK(r.n_pairs == 2);
  CHECK(r.consistency == doctest::Approx(0.3));
  CHECK(r.argmax_agreement == 0.5);
  CHECK(r.records.front().sample_id == "s0");
}

TEST_CASE("evaluate: audit records, completeness and determinism") {
  EvalWorld w;
  const auto r = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen);
  CHECK(r.n_total == 8);
  CHECK(r.records.size() == 8);
  CHECK(r.n_hits <= r.n_total);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  std::size_t hits = 0;
  for (const auto& rec : r.records) hits += rec.hit;
  CHECK(static_cast<double>(hits) / r.records.size() == r.accuracy);
  const auto again = eval::summarize(r.split, r.records);
  CHECK(eval::report_text(again) == eval::report_text(r));
  CHECK(std::is_sorted(r.records.begin(), r.records.end(),
                       [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; }));

  eval::EvalOptions one;
  one.threads = 1;
  eval::EvalOptions many;
  many.threads = 3;
  const auto a = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen, one);
  const auto b = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen, many);
  CHECK(eval::report_text(a) == eval::report_text(b));

  eval::write_report(a, w.dir / "r1.json");
  eval::write_report(b, w.dir / "r2.json");
  CHECK(slurp(w.dir / "r1.json") == slurp(w.dir / "r2.json"));
}

TEST_CASE("evaluate ignores row order") {
  EvalWorld w;
  const auto base = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalHeldout);
  data::Dataset shuffled = w.ds;
  std::reverse(shuffled.rows.begin(), shuffled.rows.end());
  std::rotate(shuffled.rows.begin(), shuffled.rows.begin() + 3, shuffled.rows.end());
  const auto perm = eval::evaluate(w.params, w.cfg, w.vocab, shuffled, data::Split::EvalHeldout);
  CHECK(eval::report_text(base) == eval::report_text(perm));
}

TEST_CASE("a caption paired with itself agrees perfectly") {
  EvalWorld w;
  for (auto& row : w.ds.rows) row.paraphrase = row.caption;
  const auto r = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen);
  CHECK(r.n_pairs == r.n_total);
  CHECK(r.argmax_agreement == 1.0);
  CHECK(r.consistency == 0.0);
}

TEST_CASE("report schema") {
  EvalWorld w;
  const auto r = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen);
  const auto j = nlohmann::json::parse(eval::report_text(r));
  for (const char* key : {"split", "pointing_accuracy", "n_hits", "n_total", "degenerate", "n_pairs", "consistency",
                          "argmax_agreement", "records"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["records"].size() == r.n_total);
  for (const auto& rec : j["records"]) {
    CHECK(rec.contains("sample_id"));
    CHECK(rec["hit"].is_boolean());
    CHECK(rec["x"].is_number_integer());
  }
  const std::string text = eval::report_text(r);
  CHECK(text.back() == '\n');
  CHECK(eval::canonical_dump(nlohmann::json{{"b", 1.0 / 3.0}, {"a", 1}}) == R"({"a":1,"b":0.333333333})");
}

TEST_CASE("evaluate rejects rows without boxes") {
  EvalWorld w;
  w.ds.rows.front().gt_bbox.reset();
  const auto split = w.ds.rows.front().split;
  CHECK_THROWS_AS(eval::evaluate(w.params, w.cfg, w.vocab, w.ds, split), data::DatasetError);
}

TEST_CASE("map dumps are written per row") {
  EvalWorld w;
  eval::EvalOptions opt;
  opt.dump_dir = w.dir / "maps";
  const auto r = eval::evaluate(w.params, w.cfg, w.vocab, w.ds, data::Split::EvalSeen, opt);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(*opt.dump_dir)) {
    const auto img = explain::read_pgm(e.path());
    CHECK(img.width == 32);
    ++files;
  }
  CHECK(files >= r.n_total);
}
