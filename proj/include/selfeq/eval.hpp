#pragma once

// Pointing-game accuracy plus paraphrase-consistency metrics.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selfeq/data.hpp"
#include "selfeq/model.hpp"

namespace selfeq::eval {

struct PointResult {
  bool hit = false;
  std::size_t x = 0;
  std::size_t y = 0;
  bool degenerate = false;  // every pixel equal, so the tie rule picked (0, 0)
};

// Argmax over a height x width row-major map, first index on ties.
PointResult pointing_hit(const std::vector<float>& map, std::size_t height, std::size_t width, const data::BBox& box);

struct SampleRecord {
  std::string sample_id;
  bool hit = false;
  std::size_t x = 0;
  std::size_t y = 0;
  bool degenerate = false;
  std::optional<double> pair_mse;       // rows that carry a paraphrase
  std::optional<bool> argmax_agree;
};

struct EvalReport {
  std::string split;
  double accuracy = 0.0;
  std::size_t n_hits = 0;
  std::size_t n_total = 0;
  std::size_t degenerate = 0;
  std::size_t n_pairs = 0;
  double consistency = 0.0;       // mean pair MSE of pair-normalised maps
  double argmax_agreement = 0.0;  // fraction of pairs with argmaxes within one patch
  std::vector<SampleRecord> records;  // sorted by sample_id
};

struct EvalOptions {
  std::size_t threads = 0;  // 0: hardware concurrency
  std::optional<std::filesystem::path> dump_dir;  // PGM maps per row
};

// Throws data::DatasetError when a row of the split lacks gt_bbox.
EvalReport evaluate(const tensor::ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                    const data::Dataset& dataset, data::Split split, const EvalOptions& opt = {});

// Summary recomputed from records alone.
EvalReport summarize(std::string split, std::vector<SampleRecord> records);

// Compact JSON with sorted keys and floats printed with %.9g.
std::string canonical_dump(const nlohmann::json& j);

nlohmann::json report_json(const EvalReport& r);
// Sorted keys, floats with 9 significant digits, trailing newline.
std::string report_text(const EvalReport& r);
void write_report(const EvalReport& r, const std::filesystem::path& path);

}  // namespace selfeq::eval
