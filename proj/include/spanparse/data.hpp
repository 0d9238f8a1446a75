#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "spanparse/frame.hpp"

namespace spanparse {

struct Example {
  Utterance utterance;
  Frame gold;      // canonical on disk; any form once transformed in memory
  std::string id;
};

struct Corpus {
  std::vector<Example> examples;
  std::string split_name;
  size_t num_skipped = 0;  // malformed lines dropped at load time

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// Target-side and source-side vocabularies. Generation tokens and copy
// indices are disjoint by construction: copy tokens are positions, not
// strings.
struct Vocabulary {
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kMask = "<mask>";
  static constexpr const char* kPad = "<pad>";

  std::vector<std::string> ontology_tokens;  // sorted; "]" sorts last
  int max_index = -1;                        // copy indices are {0..max_index}
  std::vector<std::string> source_words;     // [0] is kUnk, rest sorted

  int num_index_tokens() const { return max_index + 1; }
  int gen_id(const std::string& tok) const;  // -1 when absent
  int word_id(const std::string& w) const;   // 0 (unk) when absent

  void rebuild_lookup();  // call after mutating the token lists

 private:
  std::unordered_map<std::string, int> gen_lookup_;
  std::unordered_map<std::string, int> word_lookup_;
};

struct SyntheticGrammarConfig {
  int num_intents = 3;
  int num_slots = 6;
  int max_depth = 2;            // 1 = no nesting
  int max_slots_per_intent = 2;
  int span_min = 1;             // leaf length range, inclusive
  int span_max = 3;
  int vocab_size = 60;          // filler words, split into per-slot blocks
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// TSV loader: utterance TAB frame per line, '#' comments skipped. `form`
// names the frame encoding used in the file. Lines whose frame fails to
// parse or align are dropped with a warning on stderr and counted in
// Corpus::num_skipped; lines with fewer than two fields are a hard
// MalformedLine error.
Corpus load_tsv(const std::string& path, Form form = Form::Canonical);

void write_tsv(const Corpus& corpus, const std::string& path, Form form);

// Splits on runs of whitespace. Tokens must not contain '[' or ']'.
Utterance whitespace_tokenize(const std::string& text);

// Canonical -> index conversion; the left-to-right alignment policy lives
// behind to_index_form.
Frame align_leaf_spans(const Frame& f, const Utterance& u);

// Greedy label-coverage subsample: keeps an example iff some label in it is
// still below quota k. Every label ends with min(k, available) examples.
Corpus spis_sample(const Corpus& corpus, int k, uint64_t seed);

Corpus generate_synthetic(const SyntheticGrammarConfig& cfg, int n);

// Flat key=value file, '#' comments allowed. Unknown keys are an error.
SyntheticGrammarConfig grammar_from_file(const std::string& path);

Vocabulary build_vocab(const Corpus& corpus);

}  // namespace spanparse
