// selfeq: data generation, augmentation, training, evaluation and map export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "selfeq/augment.hpp"
#include "selfeq/data.hpp"
#include "selfeq/eval.hpp"
#include "selfeq/explain.hpp"
#include "selfeq/log.hpp"
#include "selfeq/model.hpp"
#include "selfeq/train.hpp"

namespace fs = std::filesystem;
using namespace selfeq;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kIo = 2;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string split;
  std::string checkpoint;
  std::vector<std::string> sample_ids;
  std::vector<std::string> captions;
};

train::RunConfig resolve(const Flags& f) {
  train::RunConfig cfg;
  if (!f.config.empty()) cfg = train::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mode.empty()) cfg.mode = train::parse_mode(f.mode);
  return cfg;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw model::ConfigError(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw data::IoError("write failed for " + path.string());
}

int cmd_gen_data(const Flags& f) {
  const train::RunConfig cfg = resolve(f);
  require(!f.out.empty(), "gen-data needs --out");
  const auto lexicon = train::load_lexicon(cfg);
  const auto samples = data::generate_samples(cfg.seed, cfg.n_train, cfg.n_eval, cfg.data, lexicon);
  data::write_generated(samples, f.out);
  write_text(fs::path(f.out) / "config.cfg", train::config_text(cfg));
  std::cout << "wrote " << samples.size() << " samples to " << f.out << "\n";
  return kOk;
}

int cmd_augment(const Flags& f) {
  const train::RunConfig cfg = resolve(f);
  require(!f.out.empty(), "augment needs --out");
  const fs::path input = cfg.augment_input.empty() ? fs::path(SELFEQ_ASSET_DIR) / "captions200.jsonl" : fs::path(cfg.augment_input);
  augment::AugmentOptions opt;
  opt.chunk_mode = cfg.chunk_mode;
  if (!cfg.endpoint_url.empty()) {
    augment::EndpointConfig ep;
    ep.url = cfg.endpoint_url;
    ep.timeout_s = cfg.endpoint_timeout_s;
    ep.retries = cfg.endpoint_retries;
    ep.concurrency = cfg.endpoint_concurrency;
    opt.endpoint = ep;
  }
  fs::create_directories(f.out);
  const auto lexicon = train::load_lexicon(cfg);
  const auto rep = augment::augment_dataset(input, fs::path(f.out) / "augmented.jsonl", lexicon, opt, cfg.seed);
  const nlohmann::json j = {{"rows_in", rep.rows_in},
                            {"rows_out", rep.rows_out},
                            {"rows_skipped", rep.rows_skipped},
                            {"with_paraphrase", rep.with_paraphrase},
                            {"chunk_empty", rep.chunk_empty},
                            {"endpoint_fallbacks", rep.endpoint_fallbacks},
                            {"region_rows", rep.region_rows},
                            {"region_with_paraphrase", rep.region_with_paraphrase},
                            {"phrase_rows", rep.phrase_rows},
                            {"phrase_with_paraphrase", rep.phrase_with_paraphrase},
                            {"coverage", rep.coverage()}};
  write_text(fs::path(f.out) / "coverage.json", eval::canonical_dump(j) + "\n");
  write_text(fs::path(f.out) / "config.cfg", train::config_text(cfg));
  std::cout << "coverage " << rep.coverage() << " (" << rep.with_paraphrase << "/" << rep.rows_out << ")\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  const train::RunConfig cfg = resolve(f);
  require(!f.out.empty(), "train needs --out");
  const auto outcome = train::run(cfg, f.out);
  for (const auto& r : outcome.reports) {
    std::printf("%s: pointing %.4f  agreement %.4f\n", r.split.c_str(), r.accuracy, r.argmax_agreement);
  }
  return kOk;
}

struct Loaded {
  model::Checkpoint ck;
  data::Vocabulary vocab;
};

Loaded load_model(const Flags& f, const train::RunConfig& cfg) {
  require(!f.checkpoint.empty(), "--checkpoint is required");
  Loaded l{model::load_checkpoint(f.checkpoint), data::build_vocabulary(train::load_lexicon(cfg))};
  if (l.ck.config.vocab_size != l.vocab.size()) {
    throw model::ConfigError("checkpoint vocabulary (" + std::to_string(l.ck.config.vocab_size) +
                             ") does not match the lexicon (" + std::to_string(l.vocab.size()) + ")");
  }
  return l;
}

int cmd_eval(const Flags& f) {
  const train::RunConfig cfg = resolve(f);
  require(!f.out.empty(), "eval needs --out");
  require(!cfg.data_path.empty(), "eval needs data.path in the config");
  const Loaded l = load_model(f, cfg);
  const data::Dataset ds = data::open_dataset(cfg.data_path, static_cast<int>(l.ck.config.image_size));
  std::vector<data::Split> splits = cfg.eval_splits;
  if (!f.split.empty()) splits = {data::parse_split(f.split)};
  fs::create_directories(f.out);
  eval::EvalOptions opt;
  opt.threads = cfg.eval_threads;
  for (auto sp : splits) {
    if (cfg.eval_dump_maps) opt.dump_dir = fs::path(f.out) / "maps" / data::split_name(sp);
    const auto r = eval::evaluate(l.ck.params, l.ck.config, l.vocab, ds, sp, opt);
    eval::write_report(r, fs::path(f.out) / ("report_" + r.split + ".json"));
    std::printf("%s: pointing %.4f (%zu/%zu)  agreement %.4f  consistency %.6f\n", r.split.c_str(), r.accuracy, r.n_hits,
                r.n_total, r.argmax_agreement, r.consistency);
  }
  return kOk;
}

int cmd_explain(const Flags& f) {
  const train::RunConfig cfg = resolve(f);
  require(!f.out.empty(), "explain needs --out");
  require(!cfg.data_path.empty(), "explain needs data.path in the config");
  require(!f.sample_ids.empty(), "explain needs at least one --sample-id");
  const Loaded l = load_model(f, cfg);
  const data::Dataset ds = data::open_dataset(cfg.data_path, static_cast<int>(l.ck.config.image_size));
  std::map<std::string, const data::Sample*> by_id;
  for (const auto& s : ds.rows) by_id[s.sample_id] = &s;
  fs::create_directories(f.out);
  const std::size_t side = l.ck.config.image_size;
  for (const auto& id : f.sample_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw data::DatasetError("no sample with id '" + id + "'");
    const data::Sample& s = *it->second;
    std::vector<std::string> texts = f.captions;
    if (texts.empty()) {
      texts.push_back(s.caption);
      if (s.paraphrase) texts.push_back(*s.paraphrase);
    }
    const data::Image img = ds.load_image(s);
    for (const auto& t : texts) {
      const auto map = explain::gradcam(l.ck.params, l.ck.config, l.vocab, img, t);
      const auto path = fs::path(f.out) / explain::dump_name(id, t);
      explain::export_map(explain::upsample_map(map, side), side, side, path);
      std::cout << path.string() << "\n";
    }
  }
  return kOk;
}

int cmd_inspect(const Flags& f) {
  require(!f.checkpoint.empty(), "inspect needs --checkpoint");
  const model::Checkpoint ck = model::load_checkpoint(f.checkpoint);
  std::size_t total = 0;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, p] : ck.params) {
    double sq = 0.0;
    for (float v : p.values) sq += static_cast<double>(v) * v;
    tensors[name] = {{"shape", p.shape}, {"rms", p.values.empty() ? 0.0 : std::sqrt(sq / p.values.size())}};
    total += p.values.size();
  }
  const nlohmann::json summary = {{"config", ck.config.to_json()}, {"parameters", total}, {"tensors", tensors}};
  const std::string text = eval::canonical_dump(summary) + "\n";
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "inspect.json", text);
  }
  std::cout << text;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-consistent explanation training for weakly supervised grounding"};
  app.require_subcommand(1);
  Flags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "flat 'section.key = value' config file");
    sub->add_option("--seed", flags.seed, "override run.seed");
    sub->add_option("--out", flags.out, "output directory");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic grounding dataset");
  common(gen);
  auto* aug = app.add_subcommand("augment", "add paraphrases to a caption JSONL");
  common(aug);
  auto* trn = app.add_subcommand("train", "train a model and evaluate it");
  common(trn);
  trn->add_option("--mode", flags.mode, "baseline or selfeq")->check(CLI::IsMember({"baseline", "selfeq"}));
  auto* evl = app.add_subcommand("eval", "pointing-game evaluation of a checkpoint");
  common(evl);
  evl->add_option("--checkpoint", flags.checkpoint)->required();
  evl->add_option("--split", flags.split)->check(CLI::IsMember({"train", "eval_seen", "eval_heldout"}));
  auto* exp = app.add_subcommand("explain", "write attention maps as PGM");
  common(exp);
  exp->add_option("--checkpoint", flags.checkpoint)->required();
  exp->add_option("--sample-id", flags.sample_ids)->required();
  exp->add_option("--caption", flags.captions, "caption(s) to explain instead of the stored ones");
  auto* ins = app.add_subcommand("inspect", "summarise a checkpoint");
  ins->add_option("--checkpoint", flags.checkpoint)->required();
  ins->add_option("--out", flags.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(flags);
    if (aug->parsed()) return cmd_augment(flags);
    if (trn->parsed()) return cmd_train(flags);
    if (evl->parsed()) return cmd_eval(flags);
    if (exp->parsed()) return cmd_explain(flags);
    if (ins->parsed()) return cmd_inspect(flags);
  } catch (const data::IoError& e) {
    log::error(e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    log::error(e.what());
    return kIo;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kInvalid;
  }
  return kInvalid;
}
