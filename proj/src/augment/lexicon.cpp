#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "selfeq/augment.hpp"

namespace selfeq::augment {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto at = line.find(sep, start);
    out.push_back(trim(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

std::vector<std::string> split_list(const std::string& field) {
  std::vector<std::string> out;
  if (field.empty() || field == "-") return out;
  for (auto& item : split_fields(field, ',')) {
    if (!item.empty()) out.push_back(lower(item));
  }
  return out;
}

std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool sp = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!sp && !in_word) ++n;
    in_word = !sp;
  }
  return n;
}

}  // namespace

Lexicon Lexicon::parse(std::string_view text) {
  Lexicon lex;
  enum class Section { None, Nouns, Modifiers } section = Section::None;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& msg) {
    throw LexiconError("lexicon line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view view = raw;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      // "# version: x" records the curation version
      const std::string comment = trim(view.substr(hash + 1));
      if (comment.rfind("version:", 0) == 0) lex.version_ = trim(comment.substr(8));
      view = view.substr(0, hash);
    }
    const std::string line = trim(view);
    if (line.empty()) continue;
    if (line == "[nouns]") {
      section = Section::Nouns;
      continue;
    }
    if (line == "[modifiers]") {
      section = Section::Modifiers;
      continue;
    }
    if (line.front() == '[') fail("unknown section " + line);
    if (section == Section::None) fail("entry outside a section");
    if (section == Section::Modifiers) {
      std::istringstream words(line);
      std::string w;
      while (words >> w) lex.modifiers_.insert(lower(w));
      continue;
    }
    auto fields = split_fields(line, '|');
    if (fields.size() > 6) fail("too many fields");
    fields.resize(6);
    LexiconEntry e;
    e.noun = lower(fields[0]);
    if (e.noun.empty()) fail("empty noun");
    e.synonyms = split_list(fields[1]);
    e.antonyms = split_list(fields[2]);
    e.hypernyms = split_list(fields[3]);
    e.meronyms = split_list(fields[4]);
    for (const auto& flag : split_list(fields[5])) {
      if (flag == "abstract") {
        e.abstract_noun = true;
      } else {
        fail("unknown flag '" + flag + "'");
      }
    }
    if (lex.entries_.count(e.noun)) fail("duplicate noun '" + e.noun + "'");
    lex.add_entry(std::move(e));
  }
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LexiconError("cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Lexicon lex = parse(ss.str());
  lex.validate();
  return lex;
}

void Lexicon::add_entry(LexiconEntry entry) {
  max_noun_words_ = std::max(max_noun_words_, word_count(entry.noun));
  std::string key = entry.noun;
  entries_[key] = std::move(entry);
}

const LexiconEntry* Lexicon::find(std::string_view noun) const {
  auto it = entries_.find(std::string(noun));
  return it == entries_.end() ? nullptr : &it->second;
}

void Lexicon::validate() const {
  std::map<std::string, std::string> group_of;  // token -> smallest member of its synonym group
  for (const auto& [noun, e] : entries_) {
    if (std::find(e.synonyms.begin(), e.synonyms.end(), noun) != e.synonyms.end()) {
      throw LexiconError("'" + noun + "' lists itself as a synonym");
    }
    if (e.abstract_noun && (!e.synonyms.empty() || !e.antonyms.empty() || !e.hypernyms.empty() || !e.meronyms.empty())) {
      throw LexiconError("abstract noun '" + noun + "' must not carry relations");
    }
    for (const auto& syn : e.synonyms) {
      const LexiconEntry* other = find(syn);
      if (other == nullptr || std::find(other->synonyms.begin(), other->synonyms.end(), noun) == other->synonyms.end()) {
        throw LexiconError("synonym pair '" + noun + "' -> '" + syn + "' is not stored symmetrically");
      }
    }
    std::string rep = noun;
    for (const auto& syn : e.synonyms) rep = std::min(rep, syn);
    for (const auto& tok : e.synonyms) {
      auto [it, fresh] = group_of.emplace(tok, rep);
      if (!fresh && it->second != rep) throw LexiconError("'" + tok + "' belongs to two synonym groups");
    }
    auto [it, fresh] = group_of.emplace(noun, rep);
    if (!fresh && it->second != rep) throw LexiconError("'" + noun + "' belongs to two synonym groups");
  }
  for (const auto& m : modifiers_) {
    if (entries_.count(m)) throw LexiconError("'" + m + "' is both a noun and a modifier");
  }
}

const char* source_name(RecordSource s) { return s == RecordSource::Lexicon ? "lexicon" : "endpoint"; }

}  // namespace selfeq::augment
