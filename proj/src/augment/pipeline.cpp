#include <fstream>
#include <future>
#include <regex>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "selfeq/augment.hpp"
#include "selfeq/data.hpp"
#include "selfeq/log.hpp"
#include "selfeq/rng.hpp"

namespace selfeq::augment {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw std::invalid_argument("endpoint url must look like http://host:port/path");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

// One completion request. Returns the "text" field or throws with a reason.
std::string complete(const EndpointConfig& cfg, const std::string& prompt) {
  const ParsedUrl u = parse_url(cfg.url);
  httplib::Client cli(u.origin);
  const auto secs = static_cast<time_t>(cfg.timeout_s);
  const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  const json body = {{"prompt", prompt}, {"max_tokens", cfg.max_tokens}, {"temperature", 0}, {"stop", {"Q:"}}};
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    auto res = cli.Post(u.path, body.dump(), "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "endpoint returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      // client-side rejection; asking again will not change it
      throw std::runtime_error("endpoint returned HTTP " + std::to_string(res->status));
    }
    const json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
      throw std::runtime_error("reply has no string field 'text'");
    }
    return reply["text"].get<std::string>();
  }
  throw std::runtime_error(last_error);
}

}  // namespace

ParaphraseResult endpoint_paraphrase(const EndpointConfig& cfg, std::string_view phrase, const PromptTemplate& prompt,
                                     const Lexicon& lexicon, std::uint64_t seed) {
  std::string why;
  std::string raw;
  try {
    raw = complete(cfg, prompt.render(phrase));
    ParaphraseResult parsed = parse_answer(raw, phrase);
    if (parsed) return parsed;
    why = "rejected answer: " + parsed.failure;
  } catch (const std::exception& e) {
    why = e.what();
  }
  log::info("endpoint fallback for '" + std::string(phrase) + "': " + why);
  ParaphraseResult res = paraphrase(phrase, lexicon, seed);
  res.endpoint_error = why;
  res.raw = raw;
  return res;
}

namespace {

struct RowOutcome {
  std::vector<data::Sample> rows;
  bool chunk_empty = false;
  std::size_t fallbacks = 0;
};

void attach(data::Sample& s, const ParaphraseResult& r) {
  if (r) {
    s.paraphrase = r.record->paraphrase;
    s.paraphrase_meta = data::paraphrase_meta_json(*r.record);
  } else {
    s.paraphrase.reset();
    s.paraphrase_meta.reset();
  }
}

RowOutcome process_row(const data::Sample& in, const Lexicon& lexicon, const AugmentOptions& opt, std::uint64_t seed) {
  RowOutcome out;
  auto run = [&](std::string_view text, PromptTask task, std::uint64_t row_seed) {
    if (!opt.endpoint) return paraphrase(text, lexicon, row_seed);
    ParaphraseResult r = endpoint_paraphrase(*opt.endpoint, text, builtin_template(task), lexicon, row_seed);
    if (!r.endpoint_error.empty()) ++out.fallbacks;
    return r;
  };

  if (in.caption_kind == data::CaptionKind::Region) {
    data::Sample s = in;
    attach(s, run(s.caption, PromptTask::ParaphraseRegion, substream_seed(seed, s.sample_id)));
    out.rows.push_back(std::move(s));
    return out;
  }

  std::vector<std::string> phrases;
  if (opt.endpoint) {
    const PromptTask task = opt.chunk_mode == ChunkMode::LongPhrase ? PromptTask::ChunkingLong : PromptTask::Chunking;
    try {
      phrases = parse_chunk_answer(complete(*opt.endpoint, builtin_template(task).render(in.caption)));
    } catch (const std::exception& e) {
      log::info("endpoint chunking fallback for " + in.sample_id + ": " + e.what());
      ++out.fallbacks;
    }
  }
  if (phrases.empty()) phrases = chunk_caption(in.caption, lexicon, opt.chunk_mode);
  if (phrases.empty()) {
    out.chunk_empty = true;
    data::Sample s = in;
    s.paraphrase.reset();
    s.paraphrase_meta.reset();
    out.rows.push_back(std::move(s));
    return out;
  }
  for (std::size_t k = 0; k < phrases.size(); ++k) {
    data::Sample s = in;
    s.sample_id = in.sample_id + "#" + std::to_string(k);
    s.caption_kind = data::CaptionKind::Region;
    s.caption = phrases[k];
    attach(s, run(s.caption, PromptTask::ParaphrasePhrase, substream_seed(seed, s.sample_id)));
    out.rows.push_back(std::move(s));
  }
  return out;
}

}  // namespace

CoverageReport augment_dataset(const std::filesystem::path& in_path, const std::filesystem::path& out_path,
                               const Lexicon& lexicon, const AugmentOptions& options, std::uint64_t seed) {
  std::ifstream in(in_path, std::ios::binary);
  if (!in) throw data::IoError("cannot open " + in_path.string());
  CoverageReport rep;
  std::vector<data::Sample> inputs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++rep.rows_in;
    try {
      inputs.push_back(data::sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      ++rep.rows_skipped;
      log::info(in_path.string() + ":" + std::to_string(line_no) + ": skipped: " + e.what());
    }
  }

  std::vector<RowOutcome> outcomes(inputs.size());
  if (!options.endpoint) {
    for (std::size_t i = 0; i < inputs.size(); ++i) outcomes[i] = process_row(inputs[i], lexicon, options, seed);
  } else {
    // Bounded in-flight requests; results land in input order.
    const std::size_t width = static_cast<std::size_t>(std::max(1, options.endpoint->concurrency));
    for (std::size_t base = 0; base < inputs.size(); base += width) {
      std::vector<std::future<RowOutcome>> wave;
      for (std::size_t i = base; i < std::min(inputs.size(), base + width); ++i) {
        wave.push_back(std::async(std::launch::async, [&, i] { return process_row(inputs[i], lexicon, options, seed); }));
      }
      for (std::size_t k = 0; k < wave.size(); ++k) outcomes[base + k] = wave[k].get();
    }
  }

  std::vector<data::Sample> rows;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool global = inputs[i].caption_kind == data::CaptionKind::Global;
    RowOutcome& o = outcomes[i];
    rep.endpoint_fallbacks += o.fallbacks;
    if (o.chunk_empty) ++rep.chunk_empty;
    for (auto& s : o.rows) {
      const bool has = s.paraphrase.has_value();
      ++rep.rows_out;
      if (has) ++rep.with_paraphrase;
      if (global) {
        ++rep.phrase_rows;
        if (has) ++rep.phrase_with_paraphrase;
      } else {
        ++rep.region_rows;
        if (has) ++rep.region_with_paraphrase;
      }
      rows.push_back(std::move(s));
    }
  }
  data::write_dataset(rows, out_path);
  return rep;
}

}  // namespace selfeq::augment
