#pragma once

// Paraphrase augmentation: phrase chunking of global captions and
// primary-object substitution, backed by a curated lexicon or by an external
// text-completion endpoint that is prompted with few-shot templates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace selfeq::augment {

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LexiconEntry {
  std::string noun;
  std::vector<std::string> synonyms;
  std::vector<std::string> antonyms;
  std::vector<std::string> hypernyms;
  std::vector<std::string> meronyms;
  bool abstract_noun = false;
};

class Lexicon {
 public:
  // Text format, one section per header:
  //   [nouns]      noun | synonyms | antonyms | hypernyms | meronyms | flags
  //   [modifiers]  whitespace-separated determiners, numerals and adjectives
  // Lists are comma-separated; the only flag is "abstract". '#' starts a comment.
  static Lexicon parse(std::string_view text);
  static Lexicon load(const std::filesystem::path& path);

  // Throws LexiconError on self-synonyms, asymmetric synonym pairs, abstract
  // nouns that carry relations, or a token shared by two synonym groups.
  void validate() const;

  const LexiconEntry* find(std::string_view noun) const;
  bool is_noun(std::string_view word) const { return find(word) != nullptr; }
  bool is_modifier(std::string_view word) const { return modifiers_.count(std::string(word)) != 0; }
  // Longest noun (in words) in the lexicon, for multi-word matching.
  std::size_t max_noun_words() const { return max_noun_words_; }
  const std::map<std::string, LexiconEntry>& entries() const { return entries_; }
  const std::set<std::string>& modifiers() const { return modifiers_; }
  const std::string& version() const { return version_; }

  void add_entry(LexiconEntry entry);
  void add_modifier(std::string word) { modifiers_.insert(std::move(word)); }

 private:
  std::map<std::string, LexiconEntry> entries_;
  std::set<std::string> modifiers_;
  std::size_t max_noun_words_ = 1;
  std::string version_;
};

// A word of the input with its byte range in the (unmodified) source text.
struct WordSpan {
  std::string word;  // lowercased
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<WordSpan> split_words(std::string_view text);

struct NounMatch {
  std::size_t first_word = 0;
  std::size_t word_count = 0;
  const LexiconEntry* entry = nullptr;
};

// Greedy longest-match scan for lexicon nouns, left to right.
std::vector<NounMatch> find_nouns(const std::vector<WordSpan>& words, const Lexicon& lexicon);

enum class ChunkMode { ObjectCentric, LongPhrase };

ChunkMode parse_chunk_mode(std::string_view s);
const char* chunk_mode_name(ChunkMode mode);

// Object-centric mode yields determiner/modifier runs ending in one noun;
// long-phrase mode splits only at commas and clause-level "and", keeping
// verbs and prepositional attachments. Abstract-headed phrases are dropped
// and a caption with no recognised noun yields an empty list.
std::vector<std::string> chunk_caption(std::string_view caption, const Lexicon& lexicon, ChunkMode mode);

enum class RecordSource { Lexicon, Endpoint };

const char* source_name(RecordSource s);

struct ParaphraseRecord {
  std::string source_text;
  std::string group;
  std::string synonym;
  std::string antonym;
  std::string hypernym;
  std::string meronym;
  std::string paraphrase;
  RecordSource source = RecordSource::Lexicon;
};

struct ParaphraseResult {
  std::optional<ParaphraseRecord> record;
  std::string failure;         // set when record is empty
  std::string endpoint_error;  // why an endpoint answer was not used
  std::string raw;             // completion text kept for audit (endpoint mode)

  explicit operator bool() const { return record.has_value(); }
};

// True iff paraphrase == source with exactly one word-aligned occurrence of
// group replaced by synonym.
bool substitution_is_local(std::string_view source, std::string_view paraphrase, std::string_view group,
                           std::string_view synonym);

// group = last lexicon noun; synonym drawn by seed from the group's list.
ParaphraseResult paraphrase(std::string_view text, const Lexicon& lexicon, std::uint64_t seed);

// ---- prompting -----------------------------------------------------------------

enum class PromptTask { Chunking, ParaphraseRegion, ParaphrasePhrase, ChunkingLong };

struct FewShotExample {
  std::string query;
  std::string answer;
};

struct PromptTemplate {
  PromptTask task = PromptTask::ParaphraseRegion;
  std::vector<FewShotExample> examples;

  // "Q: <q>\nA: <a>\n\n" per example, then "Q: <query>\nA:".
  std::string render(std::string_view query) const;
};

PromptTemplate builtin_template(PromptTask task);

// Parses a paraphrase answer block of "key: value" lines (group, synonym,
// antonym, hypernym, meronym, paraphrase) and checks that the paraphrase
// substitutes group with synonym in query and changes nothing else.
ParaphraseResult parse_answer(std::string_view raw, std::string_view query);

// Parses a chunking answer: phrases separated by ';' (or newlines).
std::vector<std::string> parse_chunk_answer(std::string_view raw);

struct EndpointConfig {
  std::string url;  // http://host:port/path
  double timeout_s = 30.0;
  int retries = 1;
  int concurrency = 4;
  int max_tokens = 128;
};

// POSTs {prompt, max_tokens, temperature: 0, stop: ["Q:"]} and reads the
// "text" field of the reply. Any failure falls back to the lexicon; the
// result's endpoint_error field then records why the endpoint answer was not used.
ParaphraseResult endpoint_paraphrase(const EndpointConfig& cfg, std::string_view phrase,
                                     const PromptTemplate& prompt, const Lexicon& lexicon, std::uint64_t seed);

// ---- dataset level -------------------------------------------------------------

struct AugmentOptions {
  ChunkMode chunk_mode = ChunkMode::ObjectCentric;
  std::optional<EndpointConfig> endpoint;
};

struct CoverageReport {
  std::size_t rows_in = 0;
  std::size_t rows_out = 0;
  std::size_t rows_skipped = 0;      // unreadable input lines
  std::size_t with_paraphrase = 0;   // output rows carrying a paraphrase
  std::size_t chunk_empty = 0;       // global captions with no usable phrase
  std::size_t endpoint_fallbacks = 0;
  std::size_t region_rows = 0;
  std::size_t region_with_paraphrase = 0;
  std::size_t phrase_rows = 0;
  std::size_t phrase_with_paraphrase = 0;

  double coverage() const {
    return rows_out == 0 ? 0.0 : static_cast<double>(with_paraphrase) / static_cast<double>(rows_out);
  }
};

// Region captions are paraphrased directly; global captions are chunked and
// each phrase becomes its own output row ("<sample_id>#<k>").
CoverageReport augment_dataset(const std::filesystem::path& in_path, const std::filesystem::path& out_path,
                               const Lexicon& lexicon, const AugmentOptions& options, std::uint64_t seed);

}  // namespace selfeq::augment
