#include "selfeq/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <thread>

#include "selfeq/explain.hpp"
#include "selfeq/log.hpp"

namespace selfeq::eval {

PointResult pointing_hit(const std::vector<float>& map, std::size_t height, std::size_t width, const data::BBox& box) {
  if (map.size() != height * width || map.empty()) throw std::invalid_argument("pointing_hit: map size mismatch");
  std::size_t best = 0;
  bool all_equal = true;
  for (std::size_t i = 1; i < map.size(); ++i) {
    if (map[i] > map[best]) best = i;
    if (map[i] != map[0]) all_equal = false;
  }
  PointResult r;
  r.x = best % width;
  r.y = best / width;
  r.degenerate = all_equal;
  r.hit = box.contains(static_cast<int>(r.x), static_cast<int>(r.y));
  return r;
}

namespace {

std::size_t argmax_index(const std::vector<float>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

SampleRecord score_row(const tensor::ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                       const data::Dataset& ds, const data::Sample& s, const EvalOptions& opt) {
  const data::Image img = ds.load_image(s);
  const std::size_t side = cfg.image_size;
  SampleRecord rec;
  rec.sample_id = s.sample_id;

  explain::AttentionMap g;
  std::optional<explain::AttentionMap> ge;
  if (s.paraphrase) {
    auto pair = explain::gradcam_pair(params, cfg, vocab, img, s.caption, *s.paraphrase);
    g = std::move(pair.first);
    ge = std::move(pair.second);
  } else {
    g = explain::gradcam(params, cfg, vocab, img, s.caption);
  }

  const std::vector<float> up = explain::upsample_map(g, side);
  const PointResult pr = pointing_hit(up, side, side, *s.gt_bbox);
  rec.hit = pr.hit;
  rec.x = pr.x;
  rec.y = pr.y;
  rec.degenerate = pr.degenerate;

  if (ge) {
    const std::vector<float> up_e = explain::upsample_map(*ge, side);
    const std::size_t a = argmax_index(up), b = argmax_index(up_e);
    const long dx = std::labs(static_cast<long>(a % side) - static_cast<long>(b % side));
    const long dy = std::labs(static_cast<long>(a / side) - static_cast<long>(b / side));
    rec.argmax_agree = std::max(dx, dy) < static_cast<long>(cfg.patch_size);
    explain::AttentionMap gn = g, gen = *ge;
    explain::normalize_pair(gn, gen);
    double mse = 0.0;
    for (std::size_t i = 0; i < gn.values.size(); ++i) {
      const double d = static_cast<double>(gn.values[i]) - gen.values[i];
      mse += d * d;
    }
    rec.pair_mse = mse / static_cast<double>(gn.values.size());
  }

  if (opt.dump_dir) {
    explain::export_map(up, side, side, *opt.dump_dir / explain::dump_name(s.sample_id, s.caption));
    if (ge) {
      explain::export_map(explain::upsample_map(*ge, side), side, side,
                          *opt.dump_dir / explain::dump_name(s.sample_id, *s.paraphrase));
    }
  }
  return rec;
}

}  // namespace

EvalReport summarize(std::string split, std::vector<SampleRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.sample_id < b.sample_id; });
  EvalReport r;
  r.split = std::move(split);
  double mse = 0.0;
  std::size_t agree = 0;
  for (const auto& rec : records) {
    ++r.n_total;
    if (rec.hit) ++r.n_hits;
    if (rec.degenerate) ++r.degenerate;
    if (rec.pair_mse) {
      ++r.n_pairs;
      mse += *rec.pair_mse;
      if (rec.argmax_agree.value_or(false)) ++agree;
    }
  }
  r.accuracy = r.n_total ? static_cast<double>(r.n_hits) / static_cast<double>(r.n_total) : 0.0;
  r.consistency = r.n_pairs ? mse / static_cast<double>(r.n_pairs) : 0.0;
  r.argmax_agreement = r.n_pairs ? static_cast<double>(agree) / static_cast<double>(r.n_pairs) : 0.0;
  r.records = std::move(records);
  return r;
}

EvalReport evaluate(const tensor::ParameterMap& params, const model::ModelConfig& cfg, const data::Vocabulary& vocab,
                    const data::Dataset& dataset, data::Split split, const EvalOptions& opt) {
  std::vector<const data::Sample*> rows;
  for (const auto& s : dataset.rows) {
    if (s.split != split) continue;
    if (!s.gt_bbox) throw data::DatasetError("row " + s.sample_id + " of split " + data::split_name(split) + " has no gt_bbox");
    rows.push_back(&s);
  }
  if (opt.dump_dir) std::filesystem::create_directories(*opt.dump_dir);

  std::size_t threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, rows.size()));
  std::vector<SampleRecord> records(rows.size());
  auto work = [&](std::size_t t) {
    for (std::size_t i = t; i < rows.size(); i += threads) records[i] = score_row(params, cfg, vocab, dataset, *rows[i], opt);
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t t = 0; t < threads; ++t) jobs.push_back(std::async(std::launch::async, work, t));
    for (auto& j : jobs) j.get();
  }
  EvalReport r = summarize(data::split_name(split), std::move(records));
  log::info("eval " + r.split + ": " + std::to_string(r.n_hits) + "/" + std::to_string(r.n_total) + " hits");
  return r;
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& s : r.records) {
    nlohmann::json j = {{"sample_id", s.sample_id}, {"hit", s.hit}, {"x", s.x}, {"y", s.y}, {"degenerate", s.degenerate}};
    if (s.pair_mse) j["pair_mse"] = *s.pair_mse;
    if (s.argmax_agree) j["argmax_agree"] = *s.argmax_agree;
    recs.push_back(std::move(j));
  }
  return {{"split", r.split},
          {"pointing_accuracy", r.accuracy},
          {"n_hits", r.n_hits},
          {"n_total", r.n_total},
          {"degenerate", r.degenerate},
          {"n_pairs", r.n_pairs},
          {"consistency", r.consistency},
          {"argmax_agreement", r.argmax_agreement},
          {"records", std::move(recs)}};
}

namespace {

void dump_canonical(const nlohmann::json& j, std::string& out) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        out += nlohmann::json(it.key()).dump();
        out.push_back(':');
        dump_canonical(it.value(), out);
      }
      out.push_back('}');
      break;
    }
    case nlohmann::json::value_t::array: {
      out.push_back('[');
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out.push_back(',');
        dump_canonical(j[i], out);
      }
      out.push_back(']');
      break;
    }
    case nlohmann::json::value_t::number_float: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", j.get<double>());
      out += buf;
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string canonical_dump(const nlohmann::json& j) {
  std::string out;
  dump_canonical(j, out);
  return out;
}

std::string report_text(const EvalReport& r) { return canonical_dump(report_json(r)) + "\n"; }

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  const std::string text = report_text(r);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data::IoError("cannot write report " + path.string());
  f << text;
  if (!f) throw data::IoError("write failed for " + path.string());
}

}  // namespace selfeq::eval
