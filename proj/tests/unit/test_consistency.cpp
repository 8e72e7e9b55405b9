#include <algorithm>
#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/regression.hpp"
#include "doctest.h"

using namespace selfeq;
using namespace selfeq::tensor;
using consistency::SelfEQConfig;

namespace {

Tensor grid2(float a, float b, float c, float d) { return Tensor::constant({2, 2}, {a, b, c, d}); }

}  // namespace

TEST_CASE("loss_sim worked examples") {
  CHECK(consistency::loss_sim(grid2(1, 0, 0, 0), grid2(0, 0, 0, 1)).item() == doctest::Approx(0.5).epsilon(1e-6));
  const Tensor g = grid2(0.3f, 0.1f, 0.9f, 0.2f);
  CHECK(consistency::loss_sim(g, g).item() == 0.0f);
  CHECK_THROWS_AS(consistency::loss_sim(g, Tensor::zeros({1, 4})), ShapeError);
}

TEST_CASE("loss_sim matches a double loop and is symmetric") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto a = testing::random_input(rng, {4, 4}, 0.0f, 1.0f);
    const auto b = testing::random_input(rng, {4, 4}, 0.0f, 1.0f);
    double s = 0.0;
    for (std::size_t i = 0; i < 16; ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    const Tensor ta = Tensor::constant(a.shape, a.values), tb = Tensor::constant(b.shape, b.values);
    CHECK(std::fabs(consistency::loss_sim(ta, tb).item() - s / 16) <= 1e-7);
    CHECK(consistency::loss_sim(ta, tb).item() == consistency::loss_sim(tb, ta).item());
    CHECK(consistency::loss_sim(ta, tb).item() >= 0.0f);
  }
}

TEST_CASE("roi_mask worked examples") {
  const Tensor m = consistency::roi_mask(grid2(0.5f, 0.1f, 0.3f, 0.0f), grid2(0.4f, 0.2f, 0.3f, 0.9f), 0.8f);
  CHECK(m.to_vector() == std::vector<float>{1, 0, 0, 1});
  CHECK(consistency::roi_mask(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), 0.8f).to_vector() ==
        std::vector<float>(4, 0.0f));
  // Boundary: a sum of exactly k is inside.
  CHECK(consistency::roi_mask(grid2(0.5f, 0, 0, 0), grid2(0.3f, 0, 0, 0), 0.8f)[0] == 1.0f);
  CHECK(consistency::roi_mask(grid2(0.4f, 0, 0, 0), grid2(0.4f, 0, 0, 0), 0.8f)[0] == 1.0f);
}

TEST_CASE("roi_mask is symmetric and monotone") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto a = testing::random_input(rng, {3, 3}, 0.0f, 1.0f);
    const auto b = testing::random_input(rng, {3, 3}, 0.0f, 1.0f);
    const Tensor ta = Tensor::constant(a.shape, a.values), tb = Tensor::constant(b.shape, b.values);
    const Tensor m = consistency::roi_mask(ta, tb, 0.8f);
    CHECK(m.to_vector() == consistency::roi_mask(tb, ta, 0.8f).to_vector());
    CHECK_FALSE(m.requires_grad());
    auto raised = a;
    for (auto& v : raised.values) v += 0.2f;
    const Tensor m2 = consistency::roi_mask(Tensor::constant(a.shape, raised.values), tb, 0.8f);
    for (std::size_t i = 0; i < 9; ++i) CHECK(m2[i] >= m[i]);
  }
}

TEST_CASE("roi_stats worked examples") {
  const auto s = consistency::roi_stats(grid2(0.5f, 0.7f, 0.2f, 0.0f), grid2(1, 0, 0, 1));
  REQUIRE(s);
  CHECK(s->mean.item() == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(s->stddev.item() == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(s->count == 2.0f);

  const auto c = consistency::roi_stats(Tensor::full({3, 3}, 0.6f), Tensor::full({3, 3}, 1.0f));
  REQUIRE(c);
  CHECK(c->mean.item() == doctest::Approx(0.6));
  CHECK(c->stddev.item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_FALSE(consistency::roi_stats(grid2(1, 1, 1, 1), Tensor::zeros({2, 2})));
}

TEST_CASE("roi_stats matches a loop oracle") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto g = testing::random_input(rng, {4, 4}, 0.0f, 1.0f);
    std::vector<float> m(16);
    for (auto& v : m) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    m[t % 16] = 1.0f;
    double n = 0, sum = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      n += m[i];
      sum += g.values[i] * m[i];
    }
    const double mu = sum / n;
    double var = 0;
    for (std::size_t i = 0; i < 16; ++i) var += m[i] * (g.values[i] * m[i] - mu) * (g.values[i] * m[i] - mu);
    const auto s = consistency::roi_stats(Tensor::constant(g.shape, g.values), Tensor::constant({4, 4}, m));
    REQUIRE(s);
    CHECK(std::fabs(s->mean.item() - mu) <= 1e-7);
    CHECK(std::fabs(s->stddev.item() - std::sqrt(var / n)) <= 1e-7);
  }
}

TEST_CASE("loss_cst worked examples") {
  consistency::RoiStats a{Tensor::scalar(0.25f), Tensor::scalar(0.25f), 2};
  CHECK(consistency::loss_cst(a, a, 0.8f).item() == doctest::Approx(0.8).epsilon(1e-6));
  consistency::RoiStats hi{Tensor::scalar(0.45f), Tensor::scalar(0.0f), 2};
  CHECK(consistency::loss_cst(hi, hi, 0.8f).item() == 0.0f);
  // Every in-RoI value at exactly k/2: sigma 0 and hinges inactive.
  const auto s = consistency::roi_stats(Tensor::full({2, 2}, 0.4f), Tensor::full({2, 2}, 1.0f));
  CHECK(consistency::loss_cst(*s, *s, 0.8f).item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("loss_cst gradient matches central differences") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto g = testing::random_input(rng, {2, 2}, 0.05f, 0.6f);
    const auto ge = testing::random_input(rng, {2, 2}, 0.05f, 0.6f);
    const Tensor mask = Tensor::constant({2, 2}, {1, 1, 0, 1});
    const testing::OpFn f = [&](const std::vector<Tensor>& x) {
      const auto a = consistency::roi_stats(x[0], mask);
      const auto b = consistency::roi_stats(x[1], mask);
      return reshape(consistency::loss_cst(*a, *b, 0.8f), {1});
    };
    CHECK(testing::op_gradient_error(f, {g, ge}, rng) <= 1e-3);
  }
}

TEST_CASE("loss_selfeq worked examples") {
  SelfEQConfig cfg;
  const auto t = consistency::loss_selfeq(grid2(1, 0, 0, 0), grid2(0, 0, 0, 1), cfg);
  // sim 0.5; mask {1,0,0,1}; stats of each map (mu .5, sigma .5) -> cst = 1.0
  CHECK(t.sim.item() == doctest::Approx(0.5));
  CHECK(t.cst.item() == doctest::Approx(1.0));
  CHECK(t.total.item() == doctest::Approx(1.5));

  const Tensor same = Tensor::full({2, 2}, 0.5f);
  CHECK(consistency::loss_selfeq(same, same, cfg).total.item() == doctest::Approx(0.0).epsilon(1e-6));

  SelfEQConfig no_cst = cfg;
  no_cst.lambda = 0.0f;
  const Tensor a = grid2(0.2f, 0.9f, 0.4f, 0.0f), b = grid2(0.5f, 0.3f, 0.6f, 0.1f);
  CHECK(consistency::loss_selfeq(a, b, no_cst).total.item() == consistency::loss_sim(a, b).item());

  const auto empty = consistency::loss_selfeq(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), cfg);
  CHECK(empty.empty_roi);
  CHECK(empty.cst.item() == 0.0f);
  const auto degen = consistency::loss_selfeq(a, b, cfg, true);
  CHECK(degen.empty_roi);
  CHECK(degen.total.item() == consistency::loss_sim(a, b).item());
}

TEST_CASE("the composite worked pair: sim 0.5 plus cst 0.8") {
  // Maps whose RoI stats are mu = sigma = 0.25 on both sides.
  const Tensor g = grid2(0.5f, 0.0f, 0.0f, 0.0f), ge = grid2(0.0f, 0.0f, 0.0f, 0.5f);
  const Tensor m = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const auto a = consistency::roi_stats(g, m), b = consistency::roi_stats(ge, m);
  CHECK(consistency::loss_cst(*a, *b, 0.8f).item() == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("alpha schedule") {
  SelfEQConfig cfg;
  CHECK(cfg.alpha(0.0) == 0.0f);
  CHECK(cfg.alpha(1.0) == doctest::Approx(0.5));
  CHECK(cfg.alpha(2.0) == 1.0f);
  CHECK(cfg.alpha(5.0) == 1.0f);
  float prev = -1.0f;
  for (double p = 0.0; p < 4.0; p += 0.05) {
    CHECK(cfg.alpha(p) >= prev);
    prev = cfg.alpha(p);
  }
  cfg.k = 2.5f;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("composite loss weights its parts by alpha") {
  const model::ModelConfig c = testing::micro_config();
  const auto params = model::init_parameters(c, 5);
  Rng rng(3);
  std::vector<Tensor> patches;
  std::vector<data::TokenizedText> caps, paras;
  for (int i = 0; i < 3; ++i) {
    patches.push_back(model::patchify(testing::random_image(rng, 8), c));
    caps.push_back(testing::random_text(rng, c, 4));
    auto p = caps.back();
    p.ids[2] = 4 + (p.ids[2] - 3) % (c.vocab_size - 4);
    paras.push_back(p);
  }
  SelfEQConfig scfg;
  scfg.k = 0.3f;
  auto eval_at = [&](double progress, bool selfeq) {
    Tape tape;
    const model::BoundParams bp(params, &tape);
    std::vector<model::ImageContext> ctx;
    for (const auto& x : patches) ctx.push_back(model::image_context(bp, x, c));
    std::vector<consistency::Row> rows;
    for (int i = 0; i < 3; ++i) rows.push_back({&ctx[i], caps[i], i == 1 ? std::nullopt : std::optional(paras[i])});
    Rng r(77);
    consistency::CompositeOptions opt;
    opt.selfeq = selfeq;
    return consistency::composite_loss(bp, rows, progress, c, scfg, opt, r);
  };
  const auto r0 = eval_at(0.0, true);
  CHECK(r0.alpha == 0.0f);
  CHECK(r0.pairs == 2);
  CHECK(r0.loss.item() == doctest::Approx(r0.l_selfeq + r0.l_vl_e).epsilon(1e-5));
  const auto r1 = eval_at(1.0, true);
  CHECK(r1.loss.item() == doctest::Approx(0.5 * r1.l_vl + 0.5 * (r1.l_selfeq + r1.l_vl_e)).epsilon(1e-5));
  const auto r2 = eval_at(2.0, true);
  CHECK(r2.loss.item() == doctest::Approx(r2.l_vl).epsilon(1e-6));
  const auto base = eval_at(0.0, false);
  CHECK(base.alpha == 1.0f);
  CHECK(base.loss.item() == doctest::Approx(base.l_vl));
  CHECK(base.loss.item() == doctest::Approx(r0.l_vl));
}

TEST_CASE("similarity alone only equalises the maps; the full objective keeps the RoI lit") {
  // Opposite, equal gradients conserve a + b, so the sim-only pair meets at
  // its average instead of shrinking.
  const auto start = testing::free_maps(7);
  const auto r = testing::trivial_solution_run(7);
  CHECK(r.sim_only_gap < 1e-4);
  double avg_max = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    avg_max = std::max(avg_max, 0.5 * (start.maps.at("a").values[i] + start.maps.at("b").values[i]));
  }
  CHECK(r.sim_only_max == doctest::Approx(avg_max).epsilon(1e-3));
  CHECK(r.selfeq_roi_mean >= 0.35);
}

TEST_CASE("differentiable pair scale: gradients and scale invariance") {
  Rng rng(31);
  SelfEQConfig cfg;
  for (int t = 0; t < 10;) {
    const auto g = testing::random_input(rng, {3, 3}, 0.05f, 1.0f);
    const auto ge = testing::random_input(rng, {3, 3}, 0.05f, 1.0f);
    // Keep the probe away from the mask edge and from a tie for the maximum.
    std::vector<float> all(g.values);
    all.insert(all.end(), ge.values.begin(), ge.values.end());
    std::sort(all.rbegin(), all.rend());
    bool smooth = all[0] - all[1] > 0.02f;
    for (std::size_t i = 0; i < 9; ++i) smooth = smooth && std::fabs((g.values[i] + ge.values[i]) / all[0] - cfg.k) > 0.02f;
    if (!smooth) continue;
    ++t;
    const testing::OpFn f = [&](const std::vector<Tensor>& x) {
      const auto n = explain::normalize_pair(x[0], x[1], true);
      return reshape(consistency::loss_selfeq(n.first, n.second, cfg).total, {1});
    };
    CHECK(testing::op_gradient_error(f, {g, ge}, rng) <= 1e-2);

    // Along the uniform scaling direction the loss is flat, unlike with a
    // constant divisor.
    auto along = [&](bool scale_grad) {
      Tape tape;
      const auto a = tape.variable(g.shape, g.values);
      const auto b = tape.variable(ge.shape, ge.values);
      const auto n = explain::normalize_pair(a, b, scale_grad);
      const auto grads = tape.grad(consistency::loss_selfeq(n.first, n.second, cfg).total, {a, b});
      double d = 0.0;
      for (std::size_t i = 0; i < 9; ++i) d += grads[0][i] * g.values[i] + grads[1][i] * ge.values[i];
      return d;
    };
    CHECK(std::fabs(along(true)) <= 1e-5);
    CHECK(along(false) > 0.0);
  }
}
