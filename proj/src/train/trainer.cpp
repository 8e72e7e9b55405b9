#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "selfeq/log.hpp"
#include "selfeq/rng.hpp"
#include "selfeq/train.hpp"

namespace selfeq::train {

namespace {

std::string blob_sha1(const std::string& body) {
  const std::string header = "blob " + std::to_string(body.size()) + std::string(1, '\0');

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), body.data(), body.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
    throw std::runtime_error("sha1 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace

std::string git_blob_sha1(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data::IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return blob_sha1(ss.str());
}

nlohmann::json dataset_hash(const data::Dataset& ds) {
  std::set<std::string> rasters;
  for (const auto& s : ds.rows) rasters.insert(s.image);
  nlohmann::json files = nlohmann::json::object();
  files[ds.jsonl.filename().string()] = git_blob_sha1(ds.jsonl);
  for (const auto& r : rasters) files[r] = git_blob_sha1(ds.image_dir / r);
  // Listing in sorted-name order; its own blob id names the whole set.
  std::string listing;
  for (auto it = files.begin(); it != files.end(); ++it) listing += it.value().get<std::string>() + "  " + it.key() + "\n";
  const std::string digest = blob_sha1(listing);
  return {{"algorithm", "git-blob-sha1"}, {"digest", digest}, {"files", files}};
}

nlohmann::json step_json(const StepLog& s) {
  const auto& r = s.result;
  return {{"step", s.step},         {"epoch", s.epoch},       {"progress", s.progress},     {"alpha", r.alpha},
          {"loss", s.loss},         {"l_vl", r.l_vl},         {"l_vl_e", r.l_vl_e},         {"l_sim", r.l_sim},
          {"l_cst", r.l_cst},       {"l_selfeq", r.l_selfeq}, {"itm", r.itm},               {"mlm", r.mlm},
          {"itc", r.itc},           {"pairs", r.pairs},       {"empty_roi_count", r.empty_roi_count},
          {"degenerate_count", r.degenerate_count}};
}

augment::Lexicon load_lexicon(const RunConfig& cfg) {
  const std::filesystem::path p = cfg.lexicon_path.empty() ? std::filesystem::path(SELFEQ_ASSET_DIR) / "lexicon.txt"
                                                           : std::filesystem::path(cfg.lexicon_path);
  if (!std::filesystem::is_regular_file(p)) throw data::IoError("cannot open lexicon " + p.string());
  return augment::Lexicon::load(p);
}

model::ModelConfig resolved_model(const RunConfig& cfg, const data::Vocabulary& vocab) {
  model::ModelConfig m = cfg.model;
  if (m.vocab_size == 0) m.vocab_size = vocab.size();
  if (m.vocab_size != vocab.size()) {
    throw model::ConfigError("model.vocab_size " + std::to_string(m.vocab_size) + " does not match the lexicon vocabulary (" +
                             std::to_string(vocab.size()) + ")");
  }
  m.validate();
  return m;
}

tensor::ParameterMap initial_parameters(const RunConfig& cfg, const model::ModelConfig& mcfg) {
  if (cfg.init_checkpoint.empty()) return model::init_parameters(mcfg, substream_seed(cfg.seed, "init"));
  model::Checkpoint ck = model::load_checkpoint(cfg.init_checkpoint);
  if (ck.config.to_json() != mcfg.to_json()) {
    throw model::ConfigError("optim.init checkpoint was trained with a different model config");
  }
  return std::move(ck.params);
}

namespace {

// Batches of batch_size; a trailing single row joins the previous batch so
// every batch can form mismatched pairs.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  }
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

}  // namespace

void train_loop(TrainState& state, const RunConfig& cfg, const data::Vocabulary& vocab,
                const std::vector<data::TrainRecord>& records, const std::vector<data::Image>& images,
                const TrainHooks& hooks) {
  if (records.size() < 2) throw objectives::BatchError("training needs at least 2 records");
  if (images.size() != records.size()) throw std::invalid_argument("train_loop: one image per record expected");
  const model::ModelConfig mcfg = resolved_model(cfg, vocab);

  std::vector<tensor::Tensor> patches;
  std::vector<data::TokenizedText> captions;
  std::vector<std::optional<data::TokenizedText>> paraphrases;
  for (std::size_t i = 0; i < records.size(); ++i) {
    patches.push_back(model::patchify(images[i], mcfg));
    captions.push_back(vocab.tokenize(records[i].caption, mcfg.max_text_len));
    if (records[i].paraphrase) {
      auto t = vocab.tokenize(*records[i].paraphrase, mcfg.max_text_len);
      if (t.length >= 2) paraphrases.emplace_back(std::move(t));
      else paraphrases.emplace_back();
    } else {
      paraphrases.emplace_back();
    }
  }

  consistency::CompositeOptions opt;
  opt.selfeq = cfg.mode == Mode::SelfEQ;
  opt.toggles = cfg.objectives;
  state.optimizer.kind = cfg.optimizer;
  state.optimizer.learning_rate = cfg.learning_rate;

  std::vector<std::size_t> order(records.size());
  const std::size_t steps_per_epoch = make_batches(order, cfg.batch_size).size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(substream_seed(cfg.seed, "epoch/" + std::to_string(epoch)));
    shuffle.shuffle(order);
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      const double progress = static_cast<double>(state.step) / static_cast<double>(steps_per_epoch);
      Rng rng(substream_seed(cfg.seed, "step/" + std::to_string(state.step)));

      tensor::Tape tape;
      const model::BoundParams p(state.params, &tape);
      std::vector<model::ImageContext> contexts;
      contexts.reserve(batch.size());
      for (std::size_t i : batch) contexts.push_back(model::image_context(p, patches[i], mcfg));
      std::vector<consistency::Row> rows;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        rows.push_back({&contexts[j], captions[batch[j]], paraphrases[batch[j]]});
      }
      const consistency::CompositeResult res = consistency::composite_loss(p, rows, progress, mcfg, cfg.selfeq, opt, rng);

      std::vector<std::string> names;
      std::vector<tensor::Tensor> leaves;
      for (const auto& [name, t] : p.all()) {
        names.push_back(name);
        leaves.push_back(t);
      }
      const std::vector<tensor::Tensor> grads = tape.grad(res.loss, leaves, false);
      tensor::GradientMap gm;
      for (std::size_t i = 0; i < names.size(); ++i) gm.emplace(names[i], grads[i].to_vector());
      tensor::optimizer_step(state.optimizer, state.params, gm);

      StepLog log{state.step, epoch, progress, res, res.loss.item()};
      if (!std::isfinite(log.loss)) throw std::runtime_error("loss became non-finite at step " + std::to_string(state.step));
      if (hooks.on_step) hooks.on_step(log);
      ++state.step;
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, state.params);
  }
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw data::IoError("write failed for " + path.string());
}

}  // namespace

RunOutcome run(const RunConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  if (cfg.data_path.empty()) throw model::ConfigError("data.path is not set");
  std::filesystem::create_directories(out / "checkpoints");
  write_text(out / "config.cfg", config_text(cfg));

  const augment::Lexicon lexicon = load_lexicon(cfg);
  const data::Vocabulary vocab = data::build_vocabulary(lexicon);
  const model::ModelConfig mcfg = resolved_model(cfg, vocab);
  const data::Dataset ds = data::open_dataset(cfg.data_path, static_cast<int>(mcfg.image_size));
  write_text(out / "dataset_hash.json", eval::canonical_dump(dataset_hash(ds)) + "\n");

  const std::vector<data::TrainRecord> records = data::load_training_records(ds.rows);
  std::vector<data::Image> images;
  for (const auto& r : records) images.push_back(data::read_raster(ds.image_dir / r.image, mcfg.image_size, mcfg.image_size));
  log::info("training " + std::string(mode_name(cfg.mode)) + " on " + std::to_string(records.size()) + " records");

  TrainState state;
  state.params = initial_parameters(cfg, mcfg);
  std::ofstream steps(out / "steps.jsonl", std::ios::binary | std::ios::trunc);
  if (!steps) throw data::IoError("cannot write " + (out / "steps.jsonl").string());

  RunOutcome outcome;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    steps << eval::canonical_dump(step_json(s)) << "\n";
    log::debug("step " + std::to_string(s.step) + " loss " + std::to_string(s.loss));
  };
  hooks.on_epoch = [&](std::size_t epoch, const tensor::ParameterMap& params) {
    steps.flush();
    const auto path = out / "checkpoints" / ("epoch-" + std::to_string(epoch + 1) + ".ckpt");
    model::save_checkpoint(params, mcfg, path);
    outcome.final_checkpoint = path;
    log::info("epoch " + std::to_string(epoch + 1) + " done, step " + std::to_string(state.step));
  };
  train_loop(state, cfg, vocab, records, images, hooks);
  steps.close();
  if (!steps) throw data::IoError("write failed for steps.jsonl");
  outcome.steps = state.step;

  nlohmann::json report = {{"mode", mode_name(cfg.mode)},
                           {"seed", cfg.seed},
                           {"steps", state.step},
                           {"checkpoint", outcome.final_checkpoint.filename().string()}};
  nlohmann::json splits = nlohmann::json::object();
  eval::EvalOptions eopt;
  eopt.threads = cfg.eval_threads;
  for (data::Split sp : cfg.eval_splits) {
    const bool present = std::any_of(ds.rows.begin(), ds.rows.end(), [&](const data::Sample& s) { return s.split == sp; });
    if (!present) continue;
    if (cfg.eval_dump_maps) eopt.dump_dir = out / "maps" / data::split_name(sp);
    eval::EvalReport r = eval::evaluate(state.params, mcfg, vocab, ds, sp, eopt);
    splits[data::split_name(sp)] = eval::report_json(r);
    outcome.reports.push_back(std::move(r));
  }
  report["splits"] = std::move(splits);
  write_text(out / "report.json", eval::canonical_dump(report) + "\n");
  return outcome;
}

}  // namespace selfeq::train
