#pragma once

// A small generated dataset on disk plus a matching tiny model, for tests
// that need the whole pipeline without the default sizes.

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "selfeq/augment.hpp"
#include "selfeq/data.hpp"
#include "selfeq/model.hpp"
#include "selfeq/train.hpp"

namespace selfeq::testing {

// Removed with everything inside when it goes out of scope.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("selfeq-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline const augment::Lexicon& bundled_lexicon() {
  static const augment::Lexicon lex = augment::Lexicon::load(std::filesystem::path(SELFEQ_ASSET_DIR) / "lexicon.txt");
  return lex;
}

inline data::DataConfig small_data_config() {
  data::DataConfig d;
  d.image_size = 32;
  d.min_objects = 1;
  d.max_objects = 3;
  d.min_size = 4.0f;
  d.max_size = 6.0f;
  return d;
}

inline model::ModelConfig small_model_config(std::size_t vocab_size) {
  model::ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_fusion_layers = 1;
  c.ffn_hidden = 16;
  c.vocab_size = vocab_size;
  c.max_text_len = 12;
  c.init_scale = 0.3f;
  c.temperature = 0.5f;
  return c;
}

inline void write_small_dataset(const std::filesystem::path& dir, std::uint64_t seed, std::size_t n_train,
                                std::size_t n_eval) {
  const auto samples = data::generate_samples(seed, n_train, n_eval, small_data_config(), bundled_lexicon());
  data::write_generated(samples, dir);
}

// Tiny end-to-end run over a dataset written by write_small_dataset.
inline train::RunConfig small_run_config(const std::filesystem::path& data_dir, train::Mode mode) {
  train::RunConfig cfg;
  cfg.seed = 4;
  cfg.mode = mode;
  cfg.data_path = data_dir.string();
  cfg.data = small_data_config();
  const model::ModelConfig m = small_model_config(0);
  cfg.model = m;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.eval_threads = 2;
  cfg.eval_dump_maps = true;
  cfg.selfeq.k = 0.5f;
  return cfg;
}

}  // namespace selfeq::testing
