#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "selfeq/model.hpp"
#include "selfeq/rng.hpp"

namespace selfeq::model {

namespace {

constexpr char kMagic[] = "SELFEQ1\n";
constexpr std::size_t kMagicLen = 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string take(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const ParameterMap& params, const ModelConfig& cfg) {
  std::string out(kMagic, kMagicLen);
  const std::string config = cfg.to_json().dump();
  put_u64(out, config.size());
  out += config;
  const auto expected = parameter_shapes(cfg);
  if (expected.size() != params.size()) throw CheckpointError("parameter set does not match the config");
  for (const auto& [name, p] : params) {
    auto it = expected.find(name);
    if (it == expected.end() || it->second != p.shape) throw CheckpointError(name + ": not part of the config's parameter set");
    if (p.values.size() != tensor::element_count(p.shape)) throw CheckpointError(name + ": value count disagrees with shape");
    for (float v : p.values) {
      if (!std::isfinite(v)) throw CheckpointError(name + ": refusing to save a non-finite value");
    }
    put_u64(out, name.size());
    out += name;
    put_u64(out, p.shape.size());
    for (std::size_t e : p.shape) put_u64(out, e);
    const std::size_t at = out.size();
    out.resize(at + p.values.size() * sizeof(float));
    std::memcpy(out.data() + at, p.values.data(), p.values.size() * sizeof(float));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

void save_checkpoint(const ParameterMap& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(params, cfg);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data::IoError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw data::IoError("write failed for " + path.string());
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    if (bytes.size() >= 6 && bytes.compare(0, 6, "SELFEQ") == 0) throw CheckpointError("unsupported checkpoint format version");
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < kMagicLen + 8) throw CheckpointError("checkpoint is truncated");
  Reader r(bytes);
  r.take(kMagicLen);
  Checkpoint ck;
  const std::uint64_t config_len = r.u64();
  const std::string config = r.take(config_len);
  const auto cj = nlohmann::json::parse(config, nullptr, false);
  if (cj.is_discarded()) throw CheckpointError("config record is not JSON");
  ck.config = ModelConfig::from_json(cj);

  const auto expected = parameter_shapes(ck.config);
  // Entries run up to the 8-byte checksum trailer.
  while (bytes.size() - r.pos() > 8) {
    const std::string name = r.take(r.u64());
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw CheckpointError(name + ": implausible rank");
    tensor::Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(r.u64());
    auto it = expected.find(name);
    if (it == expected.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    if (it->second != shape) {
      throw CheckpointError(name + ": shape " + tensor::shape_str(shape) + " disagrees with config " +
                            tensor::shape_str(it->second));
    }
    if (ck.params.count(name)) throw CheckpointError("duplicate tensor '" + name + "'");
    const std::string raw = r.take(tensor::element_count(shape) * sizeof(float));
    tensor::Parameter p{shape, std::vector<float>(tensor::element_count(shape))};
    std::memcpy(p.values.data(), raw.data(), raw.size());
    ck.params.emplace(name, std::move(p));
  }
  if (ck.params.size() != expected.size()) throw CheckpointError("checkpoint is missing tensors");
  const std::size_t body = r.pos();
  const std::uint64_t stored = r.u64();
  if (r.pos() != bytes.size()) throw CheckpointError("trailing bytes after checksum");
  if (stored != fnv1a64(std::string_view(bytes.data(), body))) throw CheckpointError("checksum mismatch");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data::IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace selfeq::model
