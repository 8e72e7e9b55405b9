#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "selfeq/data.hpp"

namespace selfeq::data {

static_assert(std::endian::native == std::endian::little, "raster and checkpoint IO assume a little-endian host");

using nlohmann::json;

const char* caption_kind_name(CaptionKind k) { return k == CaptionKind::Region ? "region" : "global"; }

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::EvalSeen: return "eval_seen";
    case Split::EvalHeldout: return "eval_heldout";
  }
  return "?";
}

CaptionKind parse_caption_kind(std::string_view s) {
  if (s == "region") return CaptionKind::Region;
  if (s == "global") return CaptionKind::Global;
  throw DatasetError("unknown caption_kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "eval_seen") return Split::EvalSeen;
  if (s == "eval_heldout") return Split::EvalHeldout;
  throw DatasetError("unknown split '" + std::string(s) + "'");
}

json sample_to_json(const Sample& s) {
  json j;
  j["sample_id"] = s.sample_id;
  j["image"] = s.image;
  j["caption_kind"] = caption_kind_name(s.caption_kind);
  j["caption"] = s.caption;
  if (s.paraphrase) j["paraphrase"] = *s.paraphrase;
  if (s.paraphrase_meta) j["paraphrase_meta"] = *s.paraphrase_meta;
  if (s.gt_bbox) j["gt_bbox"] = {s.gt_bbox->x0, s.gt_bbox->y0, s.gt_bbox->x1, s.gt_bbox->y1};
  j["split"] = split_name(s.split);
  return j;
}

namespace {

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DatasetError(std::string("missing required field '") + key + "'");
  if (!it->is_string()) throw DatasetError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

Sample sample_from_json(const json& j) {
  if (!j.is_object()) throw DatasetError("row is not a JSON object");
  Sample s;
  s.sample_id = require_string(j, "sample_id");
  s.image = require_string(j, "image");
  s.caption_kind = parse_caption_kind(require_string(j, "caption_kind"));
  s.caption = require_string(j, "caption");
  s.split = parse_split(require_string(j, "split"));
  if (auto it = j.find("paraphrase"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw DatasetError("field 'paraphrase' must be a string");
    s.paraphrase = it->get<std::string>();
  }
  if (auto it = j.find("paraphrase_meta"); it != j.end() && !it->is_null()) s.paraphrase_meta = *it;
  if (auto it = j.find("gt_bbox"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 4) throw DatasetError("field 'gt_bbox' must be [x0,y0,x1,y1]");
    for (const auto& v : *it) {
      if (!v.is_number_integer()) throw DatasetError("gt_bbox entries must be integers");
    }
    s.gt_bbox = BBox{(*it)[0].get<int>(), (*it)[1].get<int>(), (*it)[2].get<int>(), (*it)[3].get<int>()};
    if (s.gt_bbox->x1 < s.gt_bbox->x0 || s.gt_bbox->y1 < s.gt_bbox->y0) throw DatasetError("gt_bbox is inverted");
  }
  return s;
}

std::string serialize_sample(const Sample& s) { return sample_to_json(s).dump(); }

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<Sample> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_dataset(const std::vector<Sample>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& r : rows) out << serialize_sample(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_raster(const Image& image, const std::filesystem::path& path) {
  if (image.pixels.size() != image.height * image.width * 3) throw DatasetError("raster size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write raster " + path.string());
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

Image read_raster(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raster " + path.string());
  Image img{height, width, std::vector<float>(height * width * 3)};
  const auto want = static_cast<std::streamsize>(img.pixels.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(img.pixels.data()), want);
  if (in.gcount() != want) throw IoError("raster " + path.string() + " is shorter than expected");
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("raster " + path.string() + " is longer than expected");
  return img;
}

json strip_for_training(const Sample& s) {
  if (s.split != Split::Train) throw DatasetError("row " + s.sample_id + " is not a training row");
  json j = sample_to_json(s);
  j.erase("gt_bbox");
  if (j.contains("gt_bbox")) throw DatasetError("gt_bbox survived stripping for " + s.sample_id);
  return j;
}

std::vector<TrainRecord> load_training_records(const std::vector<Sample>& rows) {
  std::vector<TrainRecord> out;
  for (const auto& s : rows) {
    if (s.split != Split::Train) continue;
    const json j = strip_for_training(s);
    TrainRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.caption_kind = parse_caption_kind(j.at("caption_kind").get<std::string>());
    r.caption = j.at("caption").get<std::string>();
    if (j.contains("paraphrase")) {
      std::string para = j.at("paraphrase").get<std::string>();
      bool ok = false;
      if (j.contains("paraphrase_meta")) {
        const json& m = j.at("paraphrase_meta");
        ok = m.contains("group") && m.contains("synonym") &&
             augment::substitution_is_local(r.caption, para, m.at("group").get<std::string>(),
                                            m.at("synonym").get<std::string>());
      }
      if (!ok) throw DatasetError("row " + r.sample_id + ": paraphrase is not a single licensed substitution");
      r.paraphrase = std::move(para);
    }
    out.push_back(std::move(r));
  }
  return out;
}

Image Dataset::load_image(const Sample& s) const {
  const auto n = static_cast<std::size_t>(image_size);
  return read_raster(image_dir / s.image, n, n);
}

Dataset open_dataset(const std::filesystem::path& path, int image_size, const std::filesystem::path& image_dir) {
  Dataset d;
  d.jsonl = std::filesystem::is_directory(path) ? path / "dataset.jsonl" : path;
  d.image_dir = image_dir.empty() ? d.jsonl.parent_path() : image_dir;
  d.image_size = image_size;
  d.rows = read_dataset(d.jsonl);
  return d;
}

}  // namespace selfeq::data
