#include <cctype>
#include <map>
#include <sstream>

#include "selfeq/augment.hpp"

namespace selfeq::augment {

std::string PromptTemplate::render(std::string_view query) const {
  std::string out;
  for (const auto& ex : examples) {
    out += "Q: " + ex.query + "\nA: " + ex.answer + "\n\n";
  }
  out += "Q: ";
  out += query;
  out += "\nA:";
  return out;
}

namespace {

std::string answer_block(const char* group, const char* synonym, const char* antonym, const char* hypernym,
                         const char* meronym, const char* para) {
  std::string s;
  s += std::string("group: ") + group + "\n";
  s += std::string("synonym: ") + synonym + "\n";
  s += std::string("antonym: ") + antonym + "\n";
  s += std::string("hypernym: ") + hypernym + "\n";
  s += std::string("meronym: ") + meronym + "\n";
  s += std::string("paraphrase: ") + para;
  return s;
}

}  // namespace

PromptTemplate builtin_template(PromptTask task) {
  PromptTemplate t;
  t.task = task;
  switch (task) {
    case PromptTask::Chunking:
      t.examples = {
          {"a photo of a man riding a horse next to a wooden fence", "a man; a horse; a wooden fence"},
          {"two dogs are playing with a red frisbee in the park", "two dogs; a red frisbee; the park"},
          {"an image of a kitchen with a white stove and a small table", "a white stove; a small table"},
          {"a woman holding an umbrella while walking down a street", "a woman; an umbrella; a street"},
      };
      break;
    case PromptTask::ChunkingLong:
      t.examples = {
          {"a photo of a man riding a horse next to a wooden fence", "a man riding a horse; a wooden fence"},
          {"two dogs are playing with a red frisbee in the park", "two dogs are playing with a red frisbee in the park"},
          {"an image of a kitchen with a white stove and a small table", "a kitchen with a white stove; a small table"},
          {"a woman holding an umbrella while walking down a street", "a woman holding an umbrella; walking down a street"},
      };
      break;
    case PromptTask::ParaphraseRegion:
      t.examples = {
          {"a large brown dog with a red collar",
           answer_block("dog", "hound", "", "animal", "paw", "a large brown hound with a red collar")},
          {"frisbee", answer_block("frisbee", "disc", "", "toy", "", "disc")},
          {"there is a bicycle parked by the wall",
           answer_block("bicycle", "bike", "", "vehicle", "pedal", "there is a bike parked by the wall")},
          {"the sofa is covered with pillows",
           answer_block("sofa", "couch", "", "furniture", "cushion", "the couch is covered with pillows")},
          {"white clouds", answer_block("clouds", "", "", "", "", "")},
          {"a cup of coffee on the table",
           answer_block("cup", "mug", "", "container", "handle", "a mug of coffee on the table")},
      };
      break;
    case PromptTask::ParaphrasePhrase:
      t.examples = {
          {"a large brown dog", answer_block("dog", "hound", "", "animal", "paw", "a large brown hound")},
          {"a bicycle", answer_block("bicycle", "bike", "", "vehicle", "pedal", "a bike")},
          {"the sofa", answer_block("sofa", "couch", "", "furniture", "cushion", "the couch")},
          {"a cup", answer_block("cup", "mug", "", "container", "handle", "a mug")},
      };
      break;
  }
  return t;
}

ParaphraseResult parse_answer(std::string_view raw, std::string_view query) {
  ParaphraseResult res;
  res.raw = std::string(raw);
  std::map<std::string, std::string> fields;
  std::istringstream in{std::string(raw)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Q:", 0) == 0) break;  // model ran on into a new example
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    std::string val = line.substr(colon + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    strip(key);
    strip(val);
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!fields.count(key)) fields[key] = val;
  }
  for (const char* k : {"group", "synonym", "paraphrase"}) {
    if (fields[k].empty()) {
      res.failure = std::string("answer has no ") + k;
      return res;
    }
  }
  ParaphraseRecord r;
  r.source_text = std::string(query);
  r.group = fields["group"];
  r.synonym = fields["synonym"];
  r.antonym = fields["antonym"];
  r.hypernym = fields["hypernym"];
  r.meronym = fields["meronym"];
  r.paraphrase = fields["paraphrase"];
  r.source = RecordSource::Endpoint;
  if (!substitution_is_local(query, r.paraphrase, r.group, r.synonym)) {
    res.failure = "paraphrase is not a single substitution of group by synonym";
    return res;
  }
  res.record = std::move(r);
  return res;
}

std::vector<std::string> parse_chunk_answer(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && std::isspace(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw.substr(i, 2) == "Q:") break;
    const char c = raw[i];
    if (c == ';' || c == '\n') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

}  // namespace selfeq::augment
