#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "selfeq/train.hpp"

namespace selfeq::train {

using model::ConfigError;

const char* mode_name(Mode m) { return m == Mode::Baseline ? "baseline" : "selfeq"; }

Mode parse_mode(std::string_view s) {
  if (s == "baseline") return Mode::Baseline;
  if (s == "selfeq") return Mode::SelfEQ;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected baseline or selfeq)");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number(const std::string& key, T& ref) {
  return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return fmt(ref);
            else return std::to_string(ref);
          }};
}

Field flag(const std::string& key, bool& ref) {
  return {[&ref, key](const std::string& v) { ref = parse_bool(key, v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field text(std::string& ref) {
  return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

// Keys are bound to the fields of one config instance.
std::map<std::string, Field> fields(RunConfig& c) {
  std::map<std::string, Field> f;
  f["run.seed"] = number("run.seed", c.seed);
  f["run.mode"] = {[&c](const std::string& v) { c.mode = parse_mode(v); }, [&c] { return std::string(mode_name(c.mode)); }};

  f["data.path"] = text(c.data_path);
  f["data.lexicon"] = text(c.lexicon_path);
  f["data.n_train"] = number("data.n_train", c.n_train);
  f["data.n_eval"] = number("data.n_eval", c.n_eval);
  f["data.min_objects"] = number("data.min_objects", c.data.min_objects);
  f["data.max_objects"] = number("data.max_objects", c.data.max_objects);
  f["data.min_size"] = number("data.min_size", c.data.min_size);
  f["data.max_size"] = number("data.max_size", c.data.max_size);
  f["data.global_fraction"] = number("data.global_fraction", c.data.global_fraction);
  f["data.paraphrase_fraction"] = number("data.paraphrase_fraction", c.data.paraphrase_fraction);
  f["data.same_color_distractor"] = number("data.same_color_distractor", c.data.same_color_distractor);
  f["data.same_shape_distractor"] = number("data.same_shape_distractor", c.data.same_shape_distractor);

  auto& m = c.model;
  f["model.image_size"] = number("model.image_size", m.image_size);
  f["model.patch_size"] = number("model.patch_size", m.patch_size);
  f["model.d_model"] = number("model.d_model", m.d_model);
  f["model.n_heads"] = number("model.n_heads", m.n_heads);
  f["model.n_fusion_layers"] = number("model.n_fusion_layers", m.n_fusion_layers);
  f["model.ffn_hidden"] = number("model.ffn_hidden", m.ffn_hidden);
  f["model.vocab_size"] = number("model.vocab_size", m.vocab_size);
  f["model.max_text_len"] = number("model.max_text_len", m.max_text_len);
  f["model.explain_layer"] = number("model.explain_layer", m.explain_layer);
  f["model.temperature"] = number("model.temperature", m.temperature);
  f["model.init_scale"] = number("model.init_scale", m.init_scale);

  auto& s = c.selfeq;
  f["selfeq.k"] = number("selfeq.k", s.k);
  f["selfeq.lambda"] = number("selfeq.lambda", s.lambda);
  f["selfeq.use_sim"] = flag("selfeq.use_sim", s.use_sim);
  f["selfeq.use_cst"] = flag("selfeq.use_cst", s.use_cst);
  f["selfeq.alpha_start"] = number("selfeq.alpha_start", s.alpha_start);
  f["selfeq.alpha_end"] = number("selfeq.alpha_end", s.alpha_end);
  f["selfeq.ramp_epochs"] = number("selfeq.ramp_epochs", s.ramp_epochs);
  f["selfeq.scale_grad"] = flag("selfeq.scale_grad", s.scale_grad);

  f["objectives.itm"] = flag("objectives.itm", c.objectives.itm);
  f["objectives.mlm"] = flag("objectives.mlm", c.objectives.mlm);
  f["objectives.itc"] = flag("objectives.itc", c.objectives.itc);

  f["optim.kind"] = {[&c](const std::string& v) {
                       if (v == "adam") c.optimizer = tensor::OptimizerKind::Adam;
                       else if (v == "sgd") c.optimizer = tensor::OptimizerKind::Sgd;
                       else throw ConfigError("optim.kind: '" + v + "' (expected adam or sgd)");
                     },
                     [&c] { return std::string(c.optimizer == tensor::OptimizerKind::Adam ? "adam" : "sgd"); }};
  f["optim.lr"] = number("optim.lr", c.learning_rate);
  f["optim.batch_size"] = number("optim.batch_size", c.batch_size);
  f["optim.epochs"] = number("optim.epochs", c.epochs);
  f["optim.init"] = text(c.init_checkpoint);

  f["augment.input"] = text(c.augment_input);
  f["augment.chunk_mode"] = {[&c](const std::string& v) {
                               try {
                                 c.chunk_mode = augment::parse_chunk_mode(v);
                               } catch (const std::exception& e) {
                                 throw ConfigError(std::string("augment.chunk_mode: ") + e.what());
                               }
                             },
                             [&c] { return std::string(augment::chunk_mode_name(c.chunk_mode)); }};
  f["augment.endpoint_url"] = text(c.endpoint_url);
  f["augment.timeout_s"] = number("augment.timeout_s", c.endpoint_timeout_s);
  f["augment.retries"] = number("augment.retries", c.endpoint_retries);
  f["augment.concurrency"] = number("augment.concurrency", c.endpoint_concurrency);

  f["eval.splits"] = {[&c](const std::string& v) {
                        c.eval_splits.clear();
                        std::stringstream ss(v);
                        std::string part;
                        while (std::getline(ss, part, ',')) {
                          const std::string name = trim(part);
                          if (name.empty()) continue;
                          try {
                            c.eval_splits.push_back(data::parse_split(name));
                          } catch (const std::exception& e) {
                            throw ConfigError(std::string("eval.splits: ") + e.what());
                          }
                        }
                      },
                      [&c] {
                        std::string out;
                        for (auto sp : c.eval_splits) out += (out.empty() ? "" : ",") + std::string(data::split_name(sp));
                        return out;
                      }};
  f["eval.threads"] = number("eval.threads", c.eval_threads);
  f["eval.dump_maps"] = flag("eval.dump_maps", c.eval_dump_maps);
  return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto f = fields(*this);
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(value);
}

std::vector<std::string> RunConfig::keys() const {
  auto f = fields(const_cast<RunConfig&>(*this));
  std::vector<std::string> out;
  for (const auto& [k, _] : f) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  model::ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 1024;  // filled from the lexicon later
  m.validate();
  selfeq.validate();
  if (batch_size < 2) throw ConfigError("optim.batch_size must be >= 2 (in-batch negatives)");
  if (epochs == 0) throw ConfigError("optim.epochs must be >= 1");
  if (!(learning_rate > 0.0f)) throw ConfigError("optim.lr must be > 0");
  if (static_cast<std::size_t>(data.image_size) != model.image_size) {
    throw ConfigError("data image size and model.image_size disagree");
  }
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    try {
      base.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.data.image_size = static_cast<int>(base.model.image_size);
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw data::IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_text(const RunConfig& cfg) {
  auto f = fields(const_cast<RunConfig&>(cfg));
  std::string out;
  for (const auto& [k, field] : f) out += k + " = " + field.get() + "\n";
  return out;
}

}  // namespace selfeq::train
