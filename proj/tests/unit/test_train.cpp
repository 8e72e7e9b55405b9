#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../support/world.hpp"
#include "doctest.h"
#include "selfeq/train.hpp"

using namespace selfeq;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void put(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(SELFEQ_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config text round-trips") {
  train::RunConfig cfg;
  cfg.seed = 99;
  cfg.mode = train::Mode::Baseline;
  cfg.learning_rate = 3e-4f;
  cfg.selfeq.k = 0.65f;
  cfg.selfeq.use_sim = false;
  cfg.eval_splits = {data::Split::EvalHeldout};
  cfg.chunk_mode = augment::ChunkMode::LongPhrase;
  const std::string text = train::config_text(cfg);
  const train::RunConfig back = train::parse_config(text);
  CHECK(train::config_text(back) == text);
  CHECK(back.seed == 99);
  CHECK(back.selfeq.k == 0.65f);
  CHECK_FALSE(back.selfeq.use_sim);
  CHECK(back.eval_splits == std::vector<data::Split>{data::Split::EvalHeldout});
  CHECK(back.keys().size() == cfg.keys().size());
}

TEST_CASE("config parsing errors name the line") {
  try {
    train::parse_config("run.seed = 1\n# comment\nmodel.wings = 2\n");
    FAIL("unknown key accepted");
  } catch (const model::ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("model.wings") != std::string::npos);
  }
  CHECK_THROWS_AS(train::parse_config("run.seed = many"), model::ConfigError);
  CHECK_THROWS_AS(train::parse_config("selfeq.use_cst = maybe"), model::ConfigError);
  CHECK_THROWS_AS(train::parse_config("just words"), model::ConfigError);
  CHECK_THROWS_AS(train::parse_config("run.mode = fancy"), model::ConfigError);
  const auto cfg = train::parse_config("  model.image_size = 32   # smaller\nmodel.patch_size=8\n");
  CHECK(cfg.model.image_size == 32);
  CHECK(cfg.data.image_size == 32);
  CHECK_THROWS_AS(train::load_config("/nonexistent/run.cfg"), data::IoError);
}

TEST_CASE("config validation") {
  train::RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.selfeq.k = 2.0f;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.learning_rate = 0.0f;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.model.patch_size = 7;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("dataset hash follows git blob hashing") {
  testing::TempDir dir("hash");
  put(dir / "hello.txt", "hello\n");
  // `git hash-object` of "hello\n"
  CHECK(train::git_blob_sha1(dir / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  put(dir / "empty.txt", "");
  CHECK(train::git_blob_sha1(dir / "empty.txt") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("small runs are byte-identical when repeated") {
  testing::TempDir data("run-data"), a("run-a"), b("run-b");
  testing::write_small_dataset(data.path(), 2, 12, 4);
  const auto cfg = testing::small_run_config(data.path(), train::Mode::SelfEQ);
  const auto ra = train::run(cfg, a.path());
  const auto rb = train::run(cfg, b.path());
  CHECK(ra.steps == 6);
  const auto ta = tree(a.path()), tb = tree(b.path());
  CHECK(ta.size() == tb.size());
  CHECK(ta == tb);
  CHECK(ta.count("checkpoints/epoch-2.ckpt"));
  CHECK(ta.count("steps.jsonl"));
  CHECK(ta.count("report.json"));
  std::size_t pgm = 0;
  for (const auto& [name, _] : ta) pgm += name.ends_with(".pgm");
  CHECK(pgm > 0);

  // One JSON object per step with the required diagnostics.
  std::istringstream lines(ta.at("steps.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "alpha", "l_vl", "l_sim", "l_cst", "l_selfeq", "empty_roi_count"}) CHECK(j.contains(key));
    ++n;
  }
  CHECK(n == 6);

  const auto ck = model::load_checkpoint(a / "checkpoints/epoch-2.ckpt");
  CHECK(model::checkpoint_bytes(ck.params, ck.config) == ta.at("checkpoints/epoch-2.ckpt"));
}

TEST_CASE("baseline and selfeq share batches and initial parameters") {
  testing::TempDir data("share-data"), a("share-a"), b("share-b");
  testing::write_small_dataset(data.path(), 2, 12, 4);
  auto base = testing::small_run_config(data.path(), train::Mode::Baseline);
  base.epochs = 1;
  auto full = base;
  full.mode = train::Mode::SelfEQ;
  train::run(base, a.path());
  train::run(full, b.path());
  const auto la = nlohmann::json::parse(slurp(a / "steps.jsonl").substr(0, slurp(a / "steps.jsonl").find('\n')));
  const auto lb = nlohmann::json::parse(slurp(b / "steps.jsonl").substr(0, slurp(b / "steps.jsonl").find('\n')));
  // Same parameters and batch at step 0, so the caption loss matches.
  CHECK(la["l_vl"] == lb["l_vl"]);
  CHECK(la["alpha"] == 1.0);
  CHECK(lb["alpha"] == 0.0);
}

TEST_CASE("cli exit codes") {
  testing::TempDir dir("cli");
  testing::write_small_dataset(dir / "data", 2, 8, 4);
  auto cfg = testing::small_run_config(dir / "data", train::Mode::Baseline);
  cfg.epochs = 1;
  put(dir / "run.cfg", train::config_text(cfg));
  const std::string c = " --config " + (dir / "run.cfg").string();

  CHECK(cli("train" + c + " --out " + (dir / "out").string()) == 0);
  const std::string ck = (dir / "out/checkpoints/epoch-1.ckpt").string();
  CHECK(cli("inspect --checkpoint " + ck) == 0);
  CHECK(cli("eval" + c + " --checkpoint " + ck + " --split eval_seen --out " + (dir / "ev").string()) == 0);
  CHECK(std::filesystem::exists(dir / "ev/report_eval_seen.json"));
  CHECK(cli("explain" + c + " --checkpoint " + ck + " --sample-id seen-00000 --out " + (dir / "ex").string()) == 0);

  CHECK(cli("") == 1);
  CHECK(cli("train --bogus") == 1);
  CHECK(cli("train --mode sideways" + c) == 1);
  CHECK(cli("explain" + c + " --checkpoint " + ck + " --sample-id nope --out " + (dir / "ex").string()) == 1);
  put(dir / "bad.cfg", "optim.batch_size = 1\n");
  CHECK(cli("train --config " + (dir / "bad.cfg").string() + " --out " + (dir / "o2").string()) == 1);

  CHECK(cli("train --config " + (dir / "missing.cfg").string() + " --out " + (dir / "o3").string()) == 2);
  CHECK(cli("inspect --checkpoint " + (dir / "missing.ckpt").string()) == 2);
  put(dir / "junk.ckpt", "not a checkpoint");
  CHECK(cli("inspect --checkpoint " + (dir / "junk.ckpt").string()) == 1);
}
