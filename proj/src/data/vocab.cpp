#include <cctype>

#include "selfeq/data.hpp"

namespace selfeq::data {

namespace {

const char* const kReserved[] = {"[CLS]", "[MASK]", "[PAD]", "[UNK]"};

const char* const kTemplateWords[] = {"a",     "in",     "the",  "top",  "middle", "bottom",
                                      "left",  "center", "right", "scene", "with",  "and",
                                      "red",   "green",  "blue", "yellow", "purple"};

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* w : kReserved) {
    ids_.emplace(w, tokens_.size());
    tokens_.emplace_back(w);
  }
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) {
    if (ids_.count(w)) continue;
    ids_.emplace(w, tokens_.size());
    tokens_.push_back(w);
  }
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }

void Vocabulary::mark_held_out(const std::string& word) {
  if (!contains(word)) throw DatasetError("held-out token not in vocabulary: " + word);
  held_out_.insert(word);
}

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenizedText Vocabulary::tokenize(std::string_view text, std::size_t max_len) const {
  if (max_len == 0) throw DatasetError("max_len must be positive");
  TokenizedText out;
  out.ids.assign(max_len, kPad);
  out.ids[0] = kCls;
  out.length = 1;
  for (const auto& w : normalize_words(text)) {
    if (out.length == max_len) break;
    out.ids[out.length++] = id(w);
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (id == kCls || id == kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

Vocabulary build_vocabulary(const augment::Lexicon& lexicon) {
  std::vector<std::string> words(std::begin(kTemplateWords), std::end(kTemplateWords));
  std::vector<std::string> synonyms;
  for (ShapeKind s : kShapes) {
    words.emplace_back(shape_word(s));
    if (const auto* e = lexicon.find(shape_word(s))) {
      for (const auto& syn : e->synonyms) {
        words.push_back(syn);
        synonyms.push_back(syn);
      }
    }
  }
  Vocabulary vocab(words);
  for (const auto& syn : synonyms) vocab.mark_held_out(syn);
  return vocab;
}

}  // namespace selfeq::data
