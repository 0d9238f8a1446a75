#include "spanparse/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace spanparse {

namespace {

// Structure and text decisions come from independent streams so that two
// configs differing only in span_length_range generate identical skeletons.
struct GenStreams {
  std::mt19937_64 structure;
  std::mt19937_64 text;

  explicit GenStreams(uint64_t seed)
      : structure(seed), text(seed ^ 0x9e3779b97f4a7c15ull) {}
};

int draw(std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

struct GrammarRules {
  const SyntheticGrammarConfig& cfg;

  // Intent i draws slots from a window of the slot space, so intents are
  // (mostly) recoverable from which slots appear.
  int window() const {
    return std::min(cfg.num_slots, std::max(2, cfg.max_slots_per_intent + 1));
  }
  int slot_at(int intent, int offset) const {
    return (intent + offset) % cfg.num_slots;
  }
  bool nests(int slot) const { return slot % 3 == 2; }
  int child_intent(int slot) const { return slot % cfg.num_intents; }
  int block_size() const { return cfg.vocab_size / cfg.num_slots; }
  std::string filler(int slot, int k) const {
    return "w" + std::to_string(slot * block_size() + k);
  }
  std::string cue(int intent) const { return "cue" + std::to_string(intent); }
  std::string intent_name(int i) const { return "GET_" + std::to_string(i); }
  std::string slot_name(int s) const { return "ARG_" + std::to_string(s); }
};

FrameNode gen_intent(const GrammarRules& g, GenStreams& rng, int intent,
                     int depth, std::vector<std::string>& words) {
  FrameNode node;
  node.kind = NodeKind::Intent;
  node.name = g.intent_name(intent);
  words.push_back(g.cue(intent));

  const int w = g.window();
  std::vector<int> offsets(w);
  std::iota(offsets.begin(), offsets.end(), 0);
  std::shuffle(offsets.begin(), offsets.end(), rng.structure);
  const int n_children =
      draw(rng.structure, 1, std::min(g.cfg.max_slots_per_intent, w));

  for (int c = 0; c < n_children; ++c) {
    const int slot = g.slot_at(intent, offsets[c]);
    FrameNode sn;
    sn.kind = NodeKind::Slot;
    sn.name = g.slot_name(slot);
    if (g.nests(slot) && depth < g.cfg.max_depth) {
      sn.children.push_back(
          gen_intent(g, rng, g.child_intent(slot), depth + 1, words));
    } else {
      const int len = draw(rng.text, g.cfg.span_min, g.cfg.span_max);
      std::vector<std::string> text;
      for (int j = 0; j < len; ++j) {
        text.push_back(g.filler(slot, draw(rng.text, 0, g.block_size() - 1)));
        words.push_back(text.back());
      }
      sn.leaf = LeafArg::of_text(std::move(text));
    }
    node.children.push_back(std::move(sn));
  }
  return node;
}

}  // namespace

void SyntheticGrammarConfig::validate() const {
  if (num_intents < 1 || num_slots < 1)
    fail(ErrorKind::ConfigError, "need at least one intent and one slot");
  if (max_depth < 1) fail(ErrorKind::ConfigError, "max_depth must be >= 1");
  if (max_slots_per_intent < 1)
    fail(ErrorKind::ConfigError, "max_slots_per_intent must be >= 1");
  if (span_min < 1 || span_max < span_min)
    fail(ErrorKind::ConfigError, "span length range must satisfy 1 <= min <= max");
  if (vocab_size < num_slots)
    fail(ErrorKind::ConfigError,
         "vocab_size must be >= num_slots (one word block per slot)");
}

Utterance whitespace_tokenize(const std::string& text) {
  Utterance u;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok.find('[') != std::string::npos ||
        tok.find(']') != std::string::npos)
      fail(ErrorKind::InvalidToken,
           "utterance token '" + tok + "' contains a reserved bracket");
    u.tokens.push_back(tok);
  }
  if (u.tokens.empty()) fail(ErrorKind::EmptyUtterance, "no tokens");
  return u;
}

Frame align_leaf_spans(const Frame& f, const Utterance& u) {
  return to_index_form(f, u);
}

Corpus load_tsv(const std::string& path, Form form) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path);

  Corpus corpus;
  corpus.split_name = std::filesystem::path(path).stem().string();

  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2)
      fail(ErrorKind::MalformedLine,
           path + ":" + std::to_string(lineno) + ": expected at least 2 fields");

    try {
      Example ex;
      ex.utterance = whitespace_tokenize(fields[0]);
      ex.gold = parse_frame(fields[1], ex.utterance, form);
      if (form == Form::Canonical)
        align_leaf_spans(ex.gold, ex.utterance);  // reject unalignable text
      ex.id = corpus.split_name + "-" + std::to_string(lineno);
      corpus.examples.push_back(std::move(ex));
    } catch (const Error& e) {
      std::cerr << "warning: " << path << ":" << lineno
                << ": skipping example (" << e.what() << ")\n";
      ++corpus.num_skipped;
    }
  }
  return corpus;
}

void write_tsv(const Corpus& corpus, const std::string& path, Form form) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  for (const auto& ex : corpus.examples) {
    Frame f = ex.gold;
    if (form != f.form) {
      Frame canon = to_canonical_form(f, ex.utterance);
      if (form == Form::Canonical) f = canon;
      else if (form == Form::Index) f = to_index_form(canon, ex.utterance);
      else f = to_span_form(canon, ex.utterance);
    }
    out << ex.utterance.text() << '\t' << serialize_frame(f) << '\n';
  }
  if (!out) fail(ErrorKind::IoError, "write failed for " + path);
}

Corpus spis_sample(const Corpus& corpus, int k, uint64_t seed) {
  if (k < 1) fail(ErrorKind::InvalidK, "k must be >= 1");

  std::vector<size_t> order(corpus.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::unordered_map<std::string, int> quota;
  std::vector<char> keep(corpus.examples.size(), 0);
  std::vector<std::string> labels;
  for (size_t i : order) {
    labels.clear();
    collect_labels(corpus.examples[i].gold.root, labels);
    // quota counts examples, so a label repeated within one frame is one.
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    bool needed = false;
    for (const auto& l : labels)
      if (quota[l] < k) {
        needed = true;
        break;
      }
    if (!needed) continue;
    keep[i] = 1;
    for (const auto& l : labels) ++quota[l];
  }

  Corpus out;
  out.split_name = corpus.split_name + "-spis" + std::to_string(k);
  for (size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) out.examples.push_back(corpus.examples[i]);
  return out;
}

Corpus generate_synthetic(const SyntheticGrammarConfig& cfg, int n) {
  cfg.validate();
  GenStreams rng(cfg.seed);
  GrammarRules rules{cfg};

  Corpus corpus;
  corpus.split_name = "synthetic";
  for (int i = 0; i < n; ++i) {
    Example ex;
    std::vector<std::string> words;
    const int root = draw(rng.structure, 0, cfg.num_intents - 1);
    ex.gold.root = gen_intent(rules, rng, root, 1, words);
    ex.gold.form = Form::Canonical;
    ex.utterance.tokens = std::move(words);
    ex.id = "syn-" + std::to_string(i);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

SyntheticGrammarConfig grammar_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path);

  SyntheticGrammarConfig cfg;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line.substr(0, line.find('#'));
    if (s.find_first_not_of(" \t\r") == std::string::npos) continue;
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::MalformedLine,
           path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string t) {
      const auto b = t.find_first_not_of(" \t\r");
      const auto e = t.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    try {
      if (key == "num_intents") cfg.num_intents = std::stoi(val);
      else if (key == "num_slots") cfg.num_slots = std::stoi(val);
      else if (key == "max_depth") cfg.max_depth = std::stoi(val);
      else if (key == "max_slots_per_intent") cfg.max_slots_per_intent = std::stoi(val);
      else if (key == "span_min") cfg.span_min = std::stoi(val);
      else if (key == "span_max") cfg.span_max = std::stoi(val);
      else if (key == "vocab_size") cfg.vocab_size = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else fail(ErrorKind::ConfigError, "unknown grammar key '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail(ErrorKind::MalformedLine,
           path + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return cfg;
}

int Vocabulary::gen_id(const std::string& tok) const {
  auto it = gen_lookup_.find(tok);
  return it == gen_lookup_.end() ? -1 : it->second;
}

int Vocabulary::word_id(const std::string& w) const {
  auto it = word_lookup_.find(w);
  return it == word_lookup_.end() ? 0 : it->second;
}

void Vocabulary::rebuild_lookup() {
  gen_lookup_.clear();
  word_lookup_.clear();
  for (size_t i = 0; i < ontology_tokens.size(); ++i)
    gen_lookup_[ontology_tokens[i]] = static_cast<int>(i);
  for (size_t i = 0; i < source_words.size(); ++i)
    word_lookup_[source_words[i]] = static_cast<int>(i);
}

Vocabulary build_vocab(const Corpus& corpus) {
  std::set<std::string> onto;
  std::set<std::string> words;
  int max_len = 0;

  std::vector<std::string> labels;
  for (const auto& ex : corpus.examples) {
    labels.clear();
    collect_labels(ex.gold.root, labels);
    for (const auto& l : labels)
      onto.insert((l.rfind("IN:", 0) == 0 ? "[IN:" : "[SL:") + l.substr(3));
    for (const auto& t : ex.utterance.tokens) words.insert(t);
    max_len = std::max(max_len, ex.utterance.size());
  }
  onto.insert("]");

  Vocabulary v;
  v.ontology_tokens.assign(onto.begin(), onto.end());  // set order is sorted
  v.max_index = max_len - 1;
  v.source_words.push_back(Vocabulary::kUnk);
  for (const auto& w : words)
    if (w != Vocabulary::kUnk) v.source_words.push_back(w);
  v.rebuild_lookup();
  return v;
}

}  // namespace spanparse
