#include <algorithm>
#include <cctype>

#include "selfeq/augment.hpp"
#include "selfeq/rng.hpp"

namespace selfeq::augment {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80; }

std::string join_words(const std::vector<WordSpan>& words, std::size_t first, std::size_t count) {
  std::string out;
  for (std::size_t i = first; i < first + count; ++i) {
    if (i > first) out.push_back(' ');
    out += words[i].word;
  }
  return out;
}

bool comma_between(std::string_view text, const std::vector<WordSpan>& words, std::size_t i) {
  if (i == 0) return false;
  const auto gap = text.substr(words[i - 1].end, words[i].begin - words[i - 1].end);
  return gap.find_first_of(",;") != std::string_view::npos;
}

std::string span_text(std::string_view text, const std::vector<WordSpan>& words, std::size_t first,
                      std::size_t last) {
  return std::string(text.substr(words[first].begin, words[last].end - words[first].begin));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<WordSpan> split_words(std::string_view text) {
  std::vector<WordSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !word_char(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t b = i;
    while (i < text.size() && word_char(static_cast<unsigned char>(text[i]))) ++i;
    if (i > b) out.push_back({lower(text.substr(b, i - b)), b, i});
  }
  return out;
}

std::vector<NounMatch> find_nouns(const std::vector<WordSpan>& words, const Lexicon& lexicon) {
  std::vector<NounMatch> out;
  std::size_t i = 0;
  while (i < words.size()) {
    bool hit = false;
    for (std::size_t n = std::min(lexicon.max_noun_words(), words.size() - i); n >= 1; --n) {
      if (const auto* e = lexicon.find(join_words(words, i, n))) {
        out.push_back({i, n, e});
        i += n;
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return out;
}

ChunkMode parse_chunk_mode(std::string_view s) {
  if (s == "object_centric") return ChunkMode::ObjectCentric;
  if (s == "long_phrase") return ChunkMode::LongPhrase;
  throw std::invalid_argument("unknown chunk mode '" + std::string(s) + "' (object_centric|long_phrase)");
}

const char* chunk_mode_name(ChunkMode mode) {
  return mode == ChunkMode::ObjectCentric ? "object_centric" : "long_phrase";
}

namespace {

std::vector<std::string> chunk_object_centric(std::string_view caption, const std::vector<WordSpan>& words,
                                              const Lexicon& lexicon) {
  const auto nouns = find_nouns(words, lexicon);
  std::vector<std::string> out;
  std::optional<std::size_t> run_start;
  std::size_t next_noun = 0;
  std::size_t i = 0;
  while (i < words.size()) {
    if (comma_between(caption, words, i)) run_start.reset();
    if (next_noun < nouns.size() && nouns[next_noun].first_word == i) {
      const NounMatch& m = nouns[next_noun++];
      const std::size_t last = i + m.word_count - 1;
      if (!m.entry->abstract_noun) out.push_back(span_text(caption, words, run_start.value_or(i), last));
      run_start.reset();
      i = last + 1;
      continue;
    }
    if (lexicon.is_modifier(words[i].word)) {
      if (!run_start) run_start = i;
    } else {
      run_start.reset();
    }
    ++i;
  }
  return out;
}

// Connectives that follow an abstract preamble noun ("a photo of ...").
bool preamble_link(const std::string& w) {
  return w == "of" || w == "with" || w == "showing" || w == "shows" || w == "where" || w == "that";
}

std::vector<std::string> chunk_long(std::string_view caption, const std::vector<WordSpan>& words,
                                    const Lexicon& lexicon) {
  const auto nouns = find_nouns(words, lexicon);
  std::vector<bool> concrete_at(words.size(), false);
  std::vector<const NounMatch*> match_at(words.size(), nullptr);
  for (const auto& m : nouns) {
    match_at[m.first_word] = &m;
    if (!m.entry->abstract_noun) concrete_at[m.first_word] = true;
  }

  std::vector<std::string> out;
  auto emit = [&](std::size_t first, std::size_t end) {
    // Strip "<modifiers> photo of" style preambles.
    std::size_t b = first;
    while (b < end && lexicon.is_modifier(words[b].word)) ++b;
    if (b < end && match_at[b] && match_at[b]->entry->abstract_noun) {
      std::size_t after = b + match_at[b]->word_count;
      if (after < end && preamble_link(words[after].word)) first = after + 1;
      else if (after >= end) return;
    }
    bool has_concrete = false;
    for (std::size_t i = first; i < end; ++i) has_concrete = has_concrete || concrete_at[i];
    if (has_concrete) out.push_back(span_text(caption, words, first, end - 1));
  };

  std::size_t seg = 0;
  bool seg_has_noun = false;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (comma_between(caption, words, i) && seg_has_noun) {
      emit(seg, i);
      seg = i;
      seg_has_noun = false;
    }
    const std::string& w = words[i].word;
    if ((w == "and" || w == "while") && seg_has_noun) {
      emit(seg, i);
      seg = i + 1;
      seg_has_noun = false;
      continue;
    }
    if (concrete_at[i]) seg_has_noun = true;
  }
  if (seg < words.size()) emit(seg, words.size());
  return out;
}

}  // namespace

std::vector<std::string> chunk_caption(std::string_view caption, const Lexicon& lexicon, ChunkMode mode) {
  const auto words = split_words(caption);
  return mode == ChunkMode::ObjectCentric ? chunk_object_centric(caption, words, lexicon)
                                          : chunk_long(caption, words, lexicon);
}

bool substitution_is_local(std::string_view source, std::string_view paraphrase, std::string_view group,
                           std::string_view synonym) {
  if (group.empty() || synonym.empty()) return false;
  const auto words = split_words(source);
  const auto group_words = split_words(group);
  const std::string syn = lower(synonym);
  std::size_t n = group_words.size();
  if (n == 0) return false;
  std::size_t hits = 0;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    bool same = true;
    for (std::size_t k = 0; k < n && same; ++k) same = words[i + k].word == group_words[k].word;
    if (!same) continue;
    const std::size_t b = words[i].begin;
    const std::size_t e = words[i + n - 1].end;
    const std::size_t tail = source.size() - e;
    if (paraphrase.size() != b + syn.size() + tail) continue;
    if (paraphrase.substr(0, b) != source.substr(0, b)) continue;
    if (paraphrase.substr(b + syn.size()) != source.substr(e)) continue;
    if (lower(paraphrase.substr(b, syn.size())) != syn) continue;
    ++hits;
  }
  return hits >= 1 && lower(source) != lower(paraphrase);
}

ParaphraseResult paraphrase(std::string_view text, const Lexicon& lexicon, std::uint64_t seed) {
  ParaphraseResult res;
  const auto words = split_words(text);
  const auto nouns = find_nouns(words, lexicon);
  const NounMatch* head = nullptr;
  for (const auto& m : nouns) {
    if (!m.entry->abstract_noun) head = &m;
  }
  if (head == nullptr) {
    res.failure = "no head noun";
    return res;
  }
  const LexiconEntry& e = *head->entry;
  if (e.synonyms.empty()) {
    res.failure = "no synonym for '" + e.noun + "'";
    return res;
  }
  Rng rng(seed);
  std::string syn = e.synonyms[rng.below(e.synonyms.size())];
  const std::size_t b = words[head->first_word].begin;
  const std::size_t end = words[head->first_word + head->word_count - 1].end;
  if (std::isupper(static_cast<unsigned char>(text[b]))) syn[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(syn[0])));

  ParaphraseRecord r;
  r.source_text = std::string(text);
  r.group = e.noun;
  r.synonym = lower(syn);
  if (!e.antonyms.empty()) r.antonym = e.antonyms.front();
  if (!e.hypernyms.empty()) r.hypernym = e.hypernyms.front();
  if (!e.meronyms.empty()) r.meronym = e.meronyms.front();
  r.paraphrase = std::string(text.substr(0, b)) + syn + std::string(text.substr(end));
  r.source = RecordSource::Lexicon;
  res.record = std::move(r);
  return res;
}

}  // namespace selfeq::augment
