#pragma once

// Run configuration, the training loop and run-directory bookkeeping.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "selfeq/augment.hpp"
#include "selfeq/consistency.hpp"
#include "selfeq/data.hpp"
#include "selfeq/eval.hpp"
#include "selfeq/model.hpp"
#include "selfeq/objectives.hpp"
#include "selfeq/optim.hpp"

namespace selfeq::train {

enum class Mode { Baseline, SelfEQ };
const char* mode_name(Mode m);
Mode parse_mode(std::string_view s);

struct RunConfig {
  std::uint64_t seed = 0;
  Mode mode = Mode::SelfEQ;

  std::string data_path;                 // dataset dir or JSONL
  std::string lexicon_path;              // defaults to the bundled lexicon
  std::size_t n_train = 2000;
  std::size_t n_eval = 400;
  data::DataConfig data;

  model::ModelConfig model;
  consistency::SelfEQConfig selfeq;
  objectives::ObjectiveToggles objectives;

  tensor::OptimizerKind optimizer = tensor::OptimizerKind::Adam;
  float learning_rate = 1e-3f;
  std::size_t batch_size = 32;
  std::size_t epochs = 6;
  std::string init_checkpoint;           // empty: fresh parameters from seed

  std::string augment_input;
  augment::ChunkMode chunk_mode = augment::ChunkMode::ObjectCentric;
  std::string endpoint_url;
  double endpoint_timeout_s = 30.0;
  int endpoint_retries = 1;
  int endpoint_concurrency = 4;

  std::vector<data::Split> eval_splits{data::Split::EvalSeen, data::Split::EvalHeldout};
  std::size_t eval_threads = 0;
  bool eval_dump_maps = false;

  void set(const std::string& key, const std::string& value);  // throws ConfigError
  std::vector<std::string> keys() const;
  void validate() const;
};

// Flat "section.key = value" lines; '#' starts a comment.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// Every key, sorted, one per line. Parsing it back gives the same config.
std::string config_text(const RunConfig& cfg);

// Git blob id (SHA-1 of "blob <size>\0" + content) of a file.
std::string git_blob_sha1(const std::filesystem::path& path);
// Blob ids of the JSONL and every raster it references, plus a digest over
// the sorted listing.
nlohmann::json dataset_hash(const data::Dataset& ds);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double progress = 0.0;
  consistency::CompositeResult result;
  float loss = 0.0f;
};

nlohmann::json step_json(const StepLog& s);

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::size_t epoch, const tensor::ParameterMap&)> on_epoch;
};

struct TrainState {
  tensor::ParameterMap params;
  tensor::OptimizerState optimizer;
  std::size_t step = 0;
};

// The pure training loop over records already in memory. Batches are
// reshuffled each epoch from the seed; nothing here touches disk.
void train_loop(TrainState& state, const RunConfig& cfg, const data::Vocabulary& vocab,
                const std::vector<data::TrainRecord>& records, const std::vector<data::Image>& images,
                const TrainHooks& hooks = {});

struct RunOutcome {
  std::filesystem::path final_checkpoint;
  std::vector<eval::EvalReport> reports;
  std::size_t steps = 0;
};

// Full run into out: resolved config, dataset hash, step log, per-epoch
// checkpoints and the final evaluation report.
RunOutcome run(const RunConfig& cfg, const std::filesystem::path& out);

// Parameters to start from: the init checkpoint when set, else fresh.
tensor::ParameterMap initial_parameters(const RunConfig& cfg, const model::ModelConfig& mcfg);
// Model config with the vocabulary size filled in.
model::ModelConfig resolved_model(const RunConfig& cfg, const data::Vocabulary& vocab);
augment::Lexicon load_lexicon(const RunConfig& cfg);

}  // namespace selfeq::train
