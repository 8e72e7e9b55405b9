#pragma once

// Synthetic grounding benchmark: shape scenes rendered to rasters, templated
// region/global captions, the token vocabulary, and JSONL persistence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfeq/augment.hpp"

namespace selfeq::data {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeKind { Circle, Square, Triangle, Cross, Ring };
enum class Color { Red, Green, Blue, Yellow, Purple };

inline constexpr std::array<ShapeKind, 5> kShapes = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle,
                                                     ShapeKind::Cross, ShapeKind::Ring};
inline constexpr std::array<Color, 5> kColors = {Color::Red, Color::Green, Color::Blue, Color::Yellow,
                                                 Color::Purple};

const char* shape_word(ShapeKind s);
const char* color_word(Color c);
std::array<float, 3> color_rgb(Color c);

// Inclusive pixel coordinates.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(int x, int y) const { return x0 <= x && x <= x1 && y0 <= y && y <= y1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

struct SceneObject {
  ShapeKind shape = ShapeKind::Circle;
  Color color = Color::Red;
  float size = 8.0f;  // radius in pixels
  float cx = 0.0f, cy = 0.0f;
  BBox bbox;
};

struct Scene {
  int image_size = 64;
  std::array<float, 3> background = {0.1f, 0.1f, 0.1f};
  std::vector<SceneObject> objects;
};

// H x W x 3, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

// Pixel (x, y) is inside iff its centre (x + 0.5, y + 0.5) satisfies the
// shape's inequality.
bool shape_contains(const SceneObject& obj, float px, float py);
// Tight box around the pixels whose centres fall inside the shape.
BBox shape_bbox(const SceneObject& obj, int image_size);
Image render_scene(const Scene& scene);

// ---- vocabulary ------------------------------------------------------------------

struct TokenizedText {
  std::vector<std::size_t> ids;  // max_text_len entries, [CLS]-prefixed, [PAD]-suffixed
  std::size_t length = 0;        // non-pad entries including [CLS]
};

class Vocabulary {
 public:
  static constexpr std::size_t kCls = 0;
  static constexpr std::size_t kMask = 1;
  static constexpr std::size_t kPad = 2;
  static constexpr std::size_t kUnk = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view word) const;  // [UNK] when absent
  bool contains(std::string_view word) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Synonym surface forms that never appear in generated training captions.
  const std::set<std::string>& held_out() const { return held_out_; }
  void mark_held_out(const std::string& word);

  TokenizedText tokenize(std::string_view text, std::size_t max_len) const;
  std::string detokenize(const std::vector<std::size_t>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::set<std::string> held_out_;
};

// Lowercased words with punctuation acting as a separator.
std::vector<std::string> normalize_words(std::string_view text);

// Template words plus every member of each shape's synonym group; all
// non-canonical shape synonyms are flagged held-out.
Vocabulary build_vocabulary(const augment::Lexicon& lexicon);

// ---- samples ---------------------------------------------------------------------

enum class CaptionKind { Region, Global };
enum class Split { Train, EvalSeen, EvalHeldout };

const char* caption_kind_name(CaptionKind k);
const char* split_name(Split s);
CaptionKind parse_caption_kind(std::string_view s);
Split parse_split(std::string_view s);

struct Sample {
  std::string sample_id;
  std::string image;  // raster file name relative to the dataset directory
  CaptionKind caption_kind = CaptionKind::Region;
  std::string caption;
  std::optional<std::string> paraphrase;
  std::optional<nlohmann::json> paraphrase_meta;
  std::optional<BBox> gt_bbox;
  Split split = Split::Train;
};

// {group, synonym, antonym, hypernym, meronym, source}
nlohmann::json paraphrase_meta_json(const augment::ParaphraseRecord& r);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);  // throws DatasetError
std::string serialize_sample(const Sample& s);     // one canonical JSONL line, no newline

std::vector<Sample> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::vector<Sample>& rows, const std::filesystem::path& path);

// <sample_id>.rgb: f32 little-endian, H x W x 3.
void write_raster(const Image& image, const std::filesystem::path& path);
Image read_raster(const std::filesystem::path& path, std::size_t height, std::size_t width);

// What the trainer is allowed to see. There is deliberately no box field.
struct TrainRecord {
  std::string sample_id;
  std::string image;
  CaptionKind caption_kind = CaptionKind::Region;
  std::string caption;
  std::optional<std::string> paraphrase;
};

template <typename T>
concept HasGroundTruthBox = requires(T t) { t.gt_bbox; };
static_assert(!HasGroundTruthBox<TrainRecord>);

// Returns the trainer-visible JSON of a training row (gt_bbox removed) and
// asserts the removal held. Throws DatasetError for non-train rows.
nlohmann::json strip_for_training(const Sample& s);
std::vector<TrainRecord> load_training_records(const std::vector<Sample>& rows);

// ---- generation ------------------------------------------------------------------

struct DataConfig {
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 4;
  float min_size = 7.0f;
  float max_size = 12.0f;
  double global_fraction = 0.2;      // training rows with a global caption
  double paraphrase_fraction = 0.5;  // training rows carrying a paraphrase
  // Probability that a distractor repeats the target's colour (resp. shape),
  // which forces the remaining attribute word to do the localisation.
  double same_color_distractor = 0.4;
  double same_shape_distractor = 0.2;
};

struct GeneratedSample {
  Sample sample;
  Scene scene;
  Image image;
  std::size_t target = 0;  // index of the named object (region captions)
};

std::string location_phrase(float cx, float cy, int image_size);
std::string region_caption(const SceneObject& obj, int image_size, std::string_view shape_noun);
std::string global_caption(const Scene& scene);

// Deterministic in (seed, n_train, n_eval, config, lexicon). Each sample draws
// from its own (seed, split, index) substream.
std::vector<GeneratedSample> generate_samples(std::uint64_t seed, std::size_t n_train, std::size_t n_eval,
                                              const DataConfig& config, const augment::Lexicon& lexicon);

// Writes dataset.jsonl plus one raster per sample into dir.
void write_generated(const std::vector<GeneratedSample>& samples, const std::filesystem::path& dir);

struct Dataset {
  std::filesystem::path jsonl;
  std::filesystem::path image_dir;  // rasters are resolved against this
  std::vector<Sample> rows;
  int image_size = 64;

  Image load_image(const Sample& s) const;
};

// path is either a dataset directory (dataset.jsonl inside) or a JSONL file.
// Rasters default to the JSONL's own directory.
Dataset open_dataset(const std::filesystem::path& path, int image_size,
                     const std::filesystem::path& image_dir = {});

}  // namespace selfeq::data
