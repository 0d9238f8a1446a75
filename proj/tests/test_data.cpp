#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "spanparse/data.hpp"

using namespace spanparse;
using testutil::slurp;
using testutil::tiny_grammar;
using testutil::tmp_path;

namespace {

// label -> number of examples containing it at least once
std::map<std::string, int> label_counts(const Corpus& c) {
  std::map<std::string, int> counts;
  for (const auto& ex : c.examples) {
    std::vector<std::string> labels;
    collect_labels(ex.gold.root, labels);
    std::set<std::string> uniq(labels.begin(), labels.end());
    for (const auto& l : uniq) ++counts[l];
  }
  return counts;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("whitespace tokenization") {
  CHECK(whitespace_tokenize("a  b\tc ").tokens ==
        std::vector<std::string>{"a", "b", "c"});
  CHECK_THROWS_AS(whitespace_tokenize(""), Error);
  CHECK_THROWS_AS(whitespace_tokenize("   "), Error);
  CHECK_THROWS_AS(whitespace_tokenize("a [IN:B"), Error);
  CHECK_THROWS_AS(whitespace_tokenize("a ]"), Error);
}

TEST_CASE("tsv write and load round trip") {
  Corpus c = generate_synthetic(tiny_grammar(5), 25);
  const std::string path = tmp_path("roundtrip.tsv");
  write_tsv(c, path, Form::Canonical);
  const Corpus back = load_tsv(path);
  REQUIRE(back.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    CHECK(back.examples[i].utterance == c.examples[i].utterance);
    CHECK(back.examples[i].gold == c.examples[i].gold);
  }

  // non-canonical forms round trip through their own encoding
  const std::string span_path = tmp_path("roundtrip-span.tsv");
  write_tsv(c, span_path, Form::Span);
  const Corpus span_back = load_tsv(span_path, Form::Span);
  REQUIRE(span_back.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(exact_match(span_back.examples[i].gold, c.examples[i].gold,
                      c.examples[i].utterance));
}

TEST_CASE("tsv loader skips comments and bad frames, rejects short lines") {
  const std::string path = tmp_path("mixed.tsv");
  {
    std::ofstream out(path);
    out << "# header comment\n";
    out << "call mom\t[IN:CALL [SL:WHO mom ] ]\n";
    out << "\n";
    out << "call dad\t[IN:CALL [SL:WHO grandma ] ]\n";  // unalignable
    out << "call dad\t[IN:CALL [SL:WHO dad\n";           // unbalanced
  }
  const Corpus c = load_tsv(path);
  CHECK(c.size() == 1);
  CHECK(c.num_skipped == 2);
  // ids are <file stem>-<line number>
  const std::string& id = c.examples[0].id;
  CHECK(id.substr(id.size() - 2) == "-2");

  const std::string bad = tmp_path("short.tsv");
  std::ofstream(bad) << "just an utterance, no tab\n";
  CHECK_THROWS_AS(load_tsv(bad), Error);
  CHECK_THROWS_AS(load_tsv(tmp_path("missing.tsv")), Error);
}

TEST_CASE("synthetic generator is deterministic and well formed") {
  const auto g = tiny_grammar(7);
  const Corpus a = generate_synthetic(g, 60);
  const Corpus b = generate_synthetic(g, 60);
  REQUIRE(a.size() == 60);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.examples[i].utterance == b.examples[i].utterance);
    CHECK(a.examples[i].gold == b.examples[i].gold);
    // every generated frame aligns and survives the span round trip
    const Frame span = to_span_form(a.examples[i].gold,
                                    a.examples[i].utterance);
    CHECK(from_span_form(span, a.examples[i].utterance) ==
          a.examples[i].gold);
  }

  const Corpus c = generate_synthetic(tiny_grammar(8), 60);
  size_t diff = 0;
  for (size_t i = 0; i < c.size(); ++i)
    diff += c.examples[i].gold == a.examples[i].gold ? 0 : 1;
  CHECK(diff > 0);  // different seed, different corpus
}

TEST_CASE("span length does not disturb the structure stream") {
  // same seed, different span range: identical skeleton sequence
  auto narrow = tiny_grammar(13);
  auto wide = tiny_grammar(13);
  wide.span_min = 4;
  wide.span_max = 6;
  const Corpus a = generate_synthetic(narrow, 40);
  const Corpus b = generate_synthetic(wide, 40);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(serialize_frame(strip_semantics(a.examples[i].gold)) ==
          serialize_frame(strip_semantics(b.examples[i].gold)));
}

TEST_CASE("spis keeps every label at its quota") {
  const Corpus full = generate_synthetic(tiny_grammar(3), 400);
  const auto full_counts = label_counts(full);

  for (int k : {1, 10, 25}) {
    const Corpus sample = spis_sample(full, k, 99);
    const auto sample_counts = label_counts(sample);
    for (const auto& [label, total] : full_counts) {
      const auto it = sample_counts.find(label);
      const int got = it == sample_counts.end() ? 0 : it->second;
      CHECK(got >= std::min(k, total));
    }
    CHECK(sample.size() <= full.size());
  }

  // deterministic in the seed, sensitive to it
  const Corpus s1 = spis_sample(full, 5, 42);
  const Corpus s2 = spis_sample(full, 5, 42);
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i)
    CHECK(s1.examples[i].id == s2.examples[i].id);

  CHECK_THROWS_AS(spis_sample(full, 0, 1), Error);
}

TEST_CASE("vocabulary construction") {
  Corpus c;
  {
    Example e;
    e.utterance = whitespace_tokenize("b a c");
    e.gold = parse_frame("[IN:ZULU [SL:ALPHA a c ] ]", e.utterance,
                         Form::Canonical);
    e.id = "x";
    c.examples.push_back(e);
  }
  {
    Example e;
    e.utterance = whitespace_tokenize("d a");
    e.gold =
        parse_frame("[IN:ECHO [SL:ALPHA d ] ]", e.utterance, Form::Canonical);
    e.id = "y";
    c.examples.push_back(e);
  }

  const Vocabulary v = build_vocab(c);
  // sorted ontology tokens, "]" last
  const std::vector<std::string> expect = {"[IN:ECHO", "[IN:ZULU",
                                           "[SL:ALPHA", "]"};
  CHECK(v.ontology_tokens == expect);
  CHECK(v.max_index == 2);  // longest utterance has 3 tokens
  CHECK(v.num_index_tokens() == 3);
  CHECK(v.gen_id("[IN:ECHO") == 0);
  CHECK(v.gen_id("]") == 3);
  CHECK(v.gen_id("[IN:NOPE") == -1);

  // source words: unk sentinel first, then sorted uniques
  REQUIRE(v.source_words.size() == 5);
  CHECK(v.source_words[0] == Vocabulary::kUnk);
  CHECK(v.word_id("a") > 0);
  CHECK(v.word_id("never-seen") == 0);
}

TEST_CASE("grammar config file") {
  const std::string path = tmp_path("grammar.cfg");
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "num_intents = 4\n";
    out << "span_max=5\n";
    out << "seed = 17\n";
  }
  const SyntheticGrammarConfig g = grammar_from_file(path);
  CHECK(g.num_intents == 4);
  CHECK(g.span_max == 5);
  CHECK(g.seed == 17);
  CHECK(g.num_slots == SyntheticGrammarConfig{}.num_slots);  // defaults kept

  const std::string bad_path = tmp_path("bad1.cfg");
  std::ofstream(bad_path) << "no_such_key = 3\n";
  CHECK_THROWS_AS(grammar_from_file(bad_path), Error);

  SyntheticGrammarConfig bad;
  bad.span_min = 3;
  bad.span_max = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
}

}  // TEST_SUITE
