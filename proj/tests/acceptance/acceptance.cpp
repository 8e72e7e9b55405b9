// Acceptance runner: one PASS/FAIL line per criterion, details indented below.

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "../support/gradcheck.hpp"
#include "../support/regression.hpp"
#include "../support/world.hpp"
#include "CLI11.hpp"
#include "selfeq/augment.hpp"
#include "selfeq/eval.hpp"
#include "selfeq/train.hpp"

namespace fs = std::filesystem;
using namespace selfeq;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> notes;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

// ---- 1 ---------------------------------------------------------------------------

Outcome autodiff() {
  Outcome o;
  const auto t0 = Clock::now();
  constexpr int kTrials = 100;
  Rng rng(2024);
  double worst_op = 0.0;
  std::string worst_name;
  std::size_t op_fail = 0, op_checks = 0;
  const auto cases = testing::primitive_cases();
  for (int t = 0; t < kTrials; ++t) {
    for (const auto& c : cases) {
      const double e = testing::op_gradient_error(c.op, c.inputs(rng), rng);
      ++op_checks;
      if (e > 1e-3) ++op_fail;
      if (e > worst_op) {
        worst_op = e;
        worst_name = c.name;
      }
    }
  }
  double worst_second = 0.0;
  for (int t = 0; t < kTrials; ++t) worst_second = std::max(worst_second, testing::second_order_error(rng));

  const model::ModelConfig micro = testing::single_block_config();
  double worst_e2e = 0.0;
  std::size_t e2e_fail = 0;
  for (int s = 1; s <= kTrials; ++s) {
    const double e = testing::vl_gradient_error(static_cast<std::uint64_t>(s), 48, micro);
    worst_e2e = std::max(worst_e2e, e);
    e2e_fail += e > 1e-2;
  }
  const double secs = seconds_since(t0);
  o.pass = op_fail == 0 && e2e_fail == 0 && secs < 60.0;
  o.notes.push_back(fmt("%zu ops x %d trials: worst rel. err %.2e (%s), %zu above 1e-3", cases.size(), kTrials, worst_op,
                        worst_name.c_str(), op_fail));
  o.notes.push_back(fmt("second-order path: worst rel. err %.2e", worst_second));
  o.notes.push_back(fmt("end-to-end L_vl, 1 head / 1 block micro model, %d seeds: worst rel. err %.2e, %zu above 1e-2",
                        kTrials, worst_e2e, e2e_fail));
  o.notes.push_back(fmt("runtime %.1f s (budget 60 s)", secs));
  return o;
}

// ---- 2 ---------------------------------------------------------------------------

Outcome equations() {
  using tensor::Tensor;
  Outcome o;
  const auto t0 = Clock::now();
  auto grid = [](float a, float b, float c, float d) { return Tensor::constant({2, 2}, {a, b, c, d}); };
  std::vector<std::pair<std::string, bool>> checks;
  auto near = [&](const std::string& what, double got, double want) {
    const bool ok = std::fabs(got - want) <= 1e-6;
    checks.emplace_back(fmt("%s = %.9g (want %.9g)", what.c_str(), got, want), ok);
  };
  const consistency::SelfEQConfig cfg;

  const Tensor g1 = grid(1, 0, 0, 0), g1e = grid(0, 0, 0, 1);
  const double sim = consistency::loss_sim(g1, g1e).item();
  near("loss_sim([[1,0],[0,0]], [[0,0],[0,1]])", sim, 0.5);
  const Tensor rnd = grid(0.3f, 0.9f, 0.1f, 0.6f);
  near("loss_sim(G, G)", consistency::loss_sim(rnd, rnd).item(), 0.0);

  const Tensor m = consistency::roi_mask(grid(0.5f, 0.1f, 0.3f, 0.0f), grid(0.4f, 0.2f, 0.3f, 0.9f), 0.8f);
  checks.emplace_back("roi_mask worked example = [[1,0],[0,1]]", m.to_vector() == std::vector<float>{1, 0, 0, 1});
  checks.emplace_back("roi_mask of two zero maps is empty",
                      consistency::roi_mask(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), 0.8f).to_vector() ==
                          std::vector<float>(4, 0.0f));
  checks.emplace_back("roi_mask boundary: 0.5 + 0.3 = k is inside",
                      consistency::roi_mask(grid(0.5f, 0, 0, 0), grid(0.3f, 0, 0, 0), 0.8f)[0] == 1.0f);

  const auto st = consistency::roi_stats(grid(0.5f, 0.7f, 0.2f, 0.0f), Tensor::constant({2, 2}, {1, 0, 0, 1}));
  near("roi_stats mean", st->mean.item(), 0.25);
  near("roi_stats stddev", st->stddev.item(), 0.25);
  const auto flat = consistency::roi_stats(Tensor::full({2, 2}, 0.6f), Tensor::full({2, 2}, 1.0f));
  near("roi_stats constant map mean", flat->mean.item(), 0.6);
  near("roi_stats constant map stddev", flat->stddev.item(), 0.0);

  const double cst = consistency::loss_cst(*st, *st, cfg.k).item();
  near("loss_cst(mu = sigma = 0.25)", cst, 0.8);
  const consistency::RoiStats sat{Tensor::scalar(0.4f), Tensor::scalar(0.0f), 2};
  near("loss_cst(mu = 0.4, sigma = 0)", consistency::loss_cst(sat, sat, cfg.k).item(), 0.0);

  near("loss_selfeq of identical maps with mu >= k/2, sigma = 0",
       consistency::loss_selfeq(Tensor::full({2, 2}, 0.5f), Tensor::full({2, 2}, 0.5f), cfg).total.item(), 0.0);
  consistency::SelfEQConfig no_cst = cfg;
  no_cst.lambda = 0.0f;
  near("loss_selfeq with lambda 0 equals loss_sim", consistency::loss_selfeq(g1, rnd, no_cst).total.item(),
       consistency::loss_sim(g1, rnd).item());
  // The worked total combines the similarity example with the consistency
  // example; no single 2x2 pair produces both values at once.
  near("worked total sim + lambda * cst", sim + cfg.lambda * cst, 1.3);

  const double secs = seconds_since(t0);
  o.pass = secs < 5.0;
  for (const auto& [what, ok] : checks) {
    o.pass = o.pass && ok;
    o.notes.push_back(std::string(ok ? "ok   " : "BAD  ") + what);
  }
  o.notes.push_back(fmt("runtime %.3f s (budget 5 s)", secs));
  return o;
}

// ---- 3 ---------------------------------------------------------------------------

Outcome trivial_solution() {
  Outcome o;
  const auto t0 = Clock::now();
  bool collapse = true, retained = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = testing::trivial_solution_run(seed);
    collapse = collapse && r.sim_only_max < 0.1;
    retained = retained && r.selfeq_roi_mean >= 0.35;
    o.notes.push_back(fmt("seed %llu: sim-only max entry %.4f (needs < 0.1), |a-b| %.1e; full objective RoI mean %.4f "
                          "(needs >= 0.35)",
                          static_cast<unsigned long long>(seed), r.sim_only_max, r.sim_only_gap, r.selfeq_roi_mean));
  }
  const double secs = seconds_since(t0);
  o.pass = collapse && retained && secs < 10.0;
  if (!collapse) {
    o.notes.push_back("the similarity term alone gives both maps equal and opposite gradients, so a + b is conserved;");
    o.notes.push_back("the pair converges to its elementwise average rather than to zero");
  }
  o.notes.push_back(fmt("runtime %.2f s (budget 10 s)", secs));
  return o;
}

// ---- 4 and 5 ----------------------------------------------------------------------

struct ExperimentOptions {
  fs::path work;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  unsigned jobs = 0;
  bool skip = false;
};

const std::vector<std::string> kArms = {"baseline", "selfeq", "cst_only", "sim_only"};

struct Job {
  std::string name;
  std::string command;
};

// Runs the jobs of each stage on a fixed pool; a stage starts when the last finished.
bool run_stages(const std::vector<std::vector<Job>>& stages, unsigned jobs, std::vector<std::string>& failures) {
  for (const auto& stage : stages) {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, stage.size()); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next == stage.size()) return;
            i = next++;
          }
          const int rc = std::system(stage[i].command.c_str());
          if (rc != 0) {
            std::lock_guard lock(mu);
            failures.push_back(stage[i].name + " exited with " + std::to_string(rc));
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (!failures.empty()) return false;
  }
  return true;
}

struct ArmResult {
  double seen = 0, heldout = 0, agree_seen = 0, agree_heldout = 0;
};

struct ExperimentResult {
  bool ran = false;
  bool ok = false;
  std::vector<std::string> failures;
  std::map<std::uint64_t, std::map<std::string, ArmResult>> arms;
  double seconds = 0.0;
  unsigned jobs = 1;
};

ExperimentResult experiment(const ExperimentOptions& opt) {
  ExperimentResult res;
  if (opt.skip) return res;
  res.ran = true;
  res.jobs = opt.jobs ? opt.jobs : std::max(1u, std::thread::hardware_concurrency());
  const auto t0 = Clock::now();
  const std::string cli = SELFEQ_CLI;
  auto quiet = [](const fs::path& log) { return " > " + log.string() + " 2>&1"; };

  std::vector<Job> gen, pretrain, arms;
  for (auto seed : opt.seeds) {
    const fs::path dir = opt.work / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    const std::string common = "data.path = " + (dir / "data").string() + "\neval.threads = 1\n";
    put(dir / "pretrain.cfg", common);
    const std::string init = "optim.init = " + (dir / "pretrain/checkpoints/epoch-6.ckpt").string() + "\n";
    put(dir / "baseline.cfg", common + init);
    put(dir / "selfeq.cfg", common + init);
    put(dir / "cst_only.cfg", common + init + "selfeq.use_sim = false\n");
    put(dir / "sim_only.cfg", common + init + "selfeq.use_cst = false\n");
    const std::string s = " --seed " + std::to_string(seed);
    gen.push_back({"gen-data seed " + std::to_string(seed),
                   cli + " gen-data --config " + (dir / "pretrain.cfg").string() + s + " --out " + (dir / "data").string() +
                       quiet(dir / "gen.log")});
    pretrain.push_back({"pretrain seed " + std::to_string(seed),
                        cli + " train --mode baseline --config " + (dir / "pretrain.cfg").string() + s + " --out " +
                            (dir / "pretrain").string() + quiet(dir / "pretrain.log")});
    for (const auto& arm : kArms) {
      const std::string mode = arm == "baseline" ? "baseline" : "selfeq";
      arms.push_back({arm + " seed " + std::to_string(seed),
                      cli + " train --mode " + mode + " --config " + (dir / (arm + ".cfg")).string() + s + " --out " +
                          (dir / arm).string() + quiet(dir / (arm + ".log"))});
    }
  }
  res.ok = run_stages({gen, pretrain, arms}, res.jobs, res.failures);
  res.seconds = seconds_since(t0);
  if (!res.ok) return res;

  for (auto seed : opt.seeds) {
    for (const auto& arm : kArms) {
      const auto j = nlohmann::json::parse(slurp(opt.work / ("seed-" + std::to_string(seed)) / arm / "report.json"));
      const auto& sp = j.at("splits");
      ArmResult a;
      a.seen = sp.at("eval_seen").at("pointing_accuracy");
      a.heldout = sp.at("eval_heldout").at("pointing_accuracy");
      a.agree_seen = sp.at("eval_seen").at("argmax_agreement");
      a.agree_heldout = sp.at("eval_heldout").at("argmax_agreement");
      res.arms[seed][arm] = a;
    }
  }
  return res;
}

Outcome grounding(const ExperimentResult& ex) {
  Outcome o;
  if (!ex.ok) {
    for (const auto& f : ex.failures) o.notes.push_back(f);
    return o;
  }
  o.pass = true;
  for (const auto& [seed, arms] : ex.arms) {
    const auto& b = arms.at("baseline");
    const auto& s = arms.at("selfeq");
    const double dh = s.heldout - b.heldout, ds = s.seen - b.seen;
    const double da_seen = s.agree_seen - b.agree_seen, da_held = s.agree_heldout - b.agree_heldout;
    const bool ok = dh >= 0.05 && ds >= 0.02 && da_seen >= 0.10 && da_held >= 0.10;
    o.pass = o.pass && ok;
    o.notes.push_back(fmt("seed %llu %s: pointing heldout %.4f -> %.4f (%+.4f, need +0.05), seen %.4f -> %.4f (%+.4f, need "
                          "+0.02)",
                          static_cast<unsigned long long>(seed), ok ? "ok " : "BAD", b.heldout, s.heldout, dh, b.seen,
                          s.seen, ds));
    o.notes.push_back(fmt("       agreement seen %.4f -> %.4f (%+.4f), heldout %.4f -> %.4f (%+.4f), need +0.10 each",
                          b.agree_seen, s.agree_seen, da_seen, b.agree_heldout, s.agree_heldout, da_held));
  }
  const bool fast = ex.seconds < 15 * 60;
  o.notes.push_back(fmt("wall time %.0f s with %u parallel jobs (budget 900 s on 4 cores)%s", ex.seconds, ex.jobs,
                        ex.jobs < 4 ? "; fewer than 4 cores, so the budget is not comparable" : ""));
  if (ex.jobs >= 4) o.pass = o.pass && fast;
  return o;
}

Outcome ablation(const ExperimentResult& ex) {
  Outcome o;
  if (!ex.ok) {
    for (const auto& f : ex.failures) o.notes.push_back(f);
    return o;
  }
  std::map<std::string, double> mean;
  for (const auto& [seed, arms] : ex.arms) {
    for (const auto& [name, r] : arms) mean[name] += r.seen / static_cast<double>(ex.arms.size());
  }
  const double full = mean["selfeq"], cst = mean["cst_only"], sim = mean["sim_only"];
  o.pass = full >= cst && cst >= sim && full - std::max(cst, sim) >= 0.01;
  o.notes.push_back(fmt("mean eval_seen pointing: full %.4f, cst-only %.4f, sim-only %.4f, baseline %.4f", full, cst, sim,
                        mean["baseline"]));
  o.notes.push_back("needs full >= cst-only >= sim-only and full ahead of both by >= 0.01");
  return o;
}

// ---- 6 ---------------------------------------------------------------------------

Outcome coverage() {
  Outcome o;
  const auto t0 = Clock::now();
  testing::TempDir dir("accept-aug");
  const fs::path in = fs::path(SELFEQ_ASSET_DIR) / "captions200.jsonl";
  const auto& lex = testing::bundled_lexicon();
  bool deterministic = true, local = true;
  double cov = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto a = augment::augment_dataset(in, dir / "a.jsonl", lex, {}, seed);
    const auto b = augment::augment_dataset(in, dir / "b.jsonl", lex, {}, seed);
    deterministic = deterministic && slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl");
    std::size_t records = 0;
    for (const auto& row : data::read_dataset(dir / "a.jsonl")) {
      if (!row.paraphrase) continue;
      ++records;
      const auto& meta = *row.paraphrase_meta;
      local = local && augment::substitution_is_local(row.caption, *row.paraphrase, meta.at("group").get<std::string>(),
                                                      meta.at("synonym").get<std::string>());
    }
    cov = seed == 1 ? a.coverage() : std::min(cov, a.coverage());
    o.notes.push_back(fmt("seed %llu: coverage %.4f (%zu/%zu rows), %zu records checked for locality",
                          static_cast<unsigned long long>(seed), a.coverage(), a.with_paraphrase, a.rows_out, records));
    (void)b;
  }
  const double secs = seconds_since(t0);
  o.pass = cov >= 0.70 && deterministic && local && secs < 5.0;
  o.notes.push_back(fmt("byte-identical reruns: %s; every record local: %s; runtime %.2f s (budget 5 s)",
                        deterministic ? "yes" : "no", local ? "yes" : "no", secs));
  return o;
}

// ---- 7 ---------------------------------------------------------------------------

Outcome determinism() {
  Outcome o;
  testing::TempDir data("accept-det-data"), a("accept-det-a"), b("accept-det-b");
  testing::write_small_dataset(data.path(), 8, 16, 6);
  const auto cfg = testing::small_run_config(data.path(), train::Mode::SelfEQ);
  train::run(cfg, a.path());
  train::run(cfg, b.path());
  const auto ta = tree(a.path()), tb = tree(b.path());
  std::size_t ckpt = 0, pgm = 0, differing = 0;
  for (const auto& [name, bytes] : ta) {
    ckpt += name.ends_with(".ckpt");
    pgm += name.ends_with(".pgm");
    auto it = tb.find(name);
    if (it == tb.end() || it->second != bytes) ++differing;
  }
  const bool same = ta.size() == tb.size() && differing == 0;
  bool round_trip = true;
  for (const auto& [name, bytes] : ta) {
    if (!name.ends_with(".ckpt")) continue;
    const auto ck = model::parse_checkpoint(bytes);
    round_trip = round_trip && model::checkpoint_bytes(ck.params, ck.config) == bytes;
  }
  o.pass = same && round_trip && ta.count("steps.jsonl") && ta.count("report.json") && ckpt > 0 && pgm > 0;
  o.notes.push_back(fmt("%zu files compared (%zu checkpoints, %zu PGM maps, step log, report): %zu differ", ta.size(), ckpt,
                        pgm, differing));
  o.notes.push_back(std::string("checkpoint load -> save reproduces the bytes: ") + (round_trip ? "yes" : "no"));
  return o;
}

// ---- 8 ---------------------------------------------------------------------------

Outcome weak_supervision() {
  static_assert(!data::HasGroundTruthBox<data::TrainRecord>, "training records must not carry boxes");
  Outcome o;
  testing::TempDir dir("accept-weak");
  testing::write_small_dataset(dir.path(), 13, 200, 20);
  const data::Dataset ds = data::open_dataset(dir.path(), 32);
  const auto records = data::load_training_records(ds.rows);
  std::size_t exposed = 0, train_rows = 0;
  for (const auto& row : ds.rows) {
    if (row.split != data::Split::Train) continue;
    ++train_rows;
    data::Sample leaky = row;
    leaky.gt_bbox = data::BBox{0, 0, 3, 3};
    exposed += data::strip_for_training(leaky).contains("gt_bbox");
  }
  o.pass = exposed == 0 && records.size() == train_rows && train_rows == 200;
  o.notes.push_back(fmt("%zu training records loaded, %zu expose gt_bbox (even when the row carried one)", records.size(),
                        exposed));
  o.notes.push_back("the trainer-facing record type has no box member (compile-time check)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  ExperimentOptions ex;
  std::string work;
  app.add_option("--work", work, "keep experiment outputs here (default: a temporary directory)");
  app.add_option("--seeds", ex.seeds, "experiment seeds");
  app.add_option("--jobs", ex.jobs, "parallel training processes (default: hardware threads)");
  app.add_flag("--skip-experiment", ex.skip, "skip the training experiment (criteria 4 and 5)");
  CLI11_PARSE(app, argc, argv);

  std::optional<testing::TempDir> scratch;
  if (work.empty()) {
    scratch.emplace("acceptance");
    ex.work = scratch->path();
  } else {
    ex.work = work;
    fs::create_directories(ex.work);
  }

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 autodiff vs finite differences", autodiff},
      {"2 consistency loss worked examples", equations},
      {"3 trivial-solution regression", trivial_solution},
  };
  ExperimentResult exr;
  bool exp_done = false;
  auto exp = [&]() -> const ExperimentResult& {
    if (!exp_done) {
      exr = experiment(ex);
      exp_done = true;
    }
    return exr;
  };
  criteria.push_back({"4 desk-scale grounding experiment", [&] { return grounding(exp()); }});
  criteria.push_back({"5 loss ablation ordering", [&] { return ablation(exp()); }});
  criteria.push_back({"6 augmentation coverage", coverage});
  criteria.push_back({"7 determinism and persistence", determinism});
  criteria.push_back({"8 weak-supervision contract", weak_supervision});

  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const bool experimental = name[0] == '4' || name[0] == '5';
    if (experimental && ex.skip) {
      std::printf("SKIP %s\n", name.c_str());
      std::fflush(stdout);
      continue;
    }
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("error: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s %s\n", o.pass ? "PASS" : "FAIL", name.c_str());
    for (const auto& n : o.notes) std::printf("     %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
