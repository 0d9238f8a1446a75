#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spanparse/error.hpp"

namespace spanparse {

// How slot leaves are represented. The three forms carry the same meaning
// over a fixed utterance; only the leaf payload changes.
//   canonical: the slot text itself        [SL:CONTENT I'll be there at 6pm ]
//   index:     contiguous token indices    [SL:CONTENT 1 2 3 4 5 ]
//   span:      first and last index        [SL:CONTENT 1 5 ]
enum class Form { Canonical, Index, Span };

const char* to_string(Form f);
Form form_from_string(const std::string& s);

// Whitespace-tokenized sentence. Token i is addressed by index i everywhere.
struct Utterance {
  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  std::string text() const;  // tokens joined by single spaces
  bool operator==(const Utterance&) const = default;
};

// Slot payload. Exactly one member group is meaningful, selected by `form`.
struct LeafArg {
  Form form = Form::Canonical;
  std::vector<std::string> text;  // canonical
  std::vector<int> indices;       // index form: ascending contiguous run
  int start = -1;                 // span form: inclusive endpoints,
  int end = -1;                   //   start <= end

  static LeafArg of_text(std::vector<std::string> t);
  static LeafArg of_indices(std::vector<int> ix);
  static LeafArg of_span(int start, int end);
  bool operator==(const LeafArg&) const = default;
};

enum class NodeKind { Intent, Slot };

// Alternating tree: intents hold slots, slots hold either intents or one
// leaf argument (or nothing at all, for skeletons).
struct FrameNode {
  NodeKind kind = NodeKind::Intent;
  std::string name;
  std::vector<FrameNode> children;
  std::optional<LeafArg> leaf;  // slots only, absent on empty slots

  bool operator==(const FrameNode&) const = default;
};

struct Frame {
  FrameNode root;
  Form form = Form::Canonical;

  bool operator==(const Frame&) const = default;
};

// Corpus-level length behaviour of a target form.
struct LengthStats {
  int num_length_classes = 0;           // distinct linearized lengths
  double mean_lengths_per_skeleton = 0; // distinct lengths per skeleton, avg
  double mean_length = 0;
  int max_length = 0;
};

// Parses the serialized tree `s` whose leaves are in `form`. Index and span
// payloads are bounds-checked against `u`; canonical leaf text is not
// required to occur in `u` (that is alignment's concern).
Frame parse_frame(const std::string& s, const Utterance& u, Form form);

// Single-space-joined linearization; parse_frame(serialize_frame(f)) == f.
std::string serialize_frame(const Frame& f);

// Target token sequence: open tokens, leaf tokens, and "]" closers.
std::vector<std::string> linearize(const Frame& f);

Frame to_index_form(const Frame& f, const Utterance& u);    // canonical -> index
Frame to_span_form(const Frame& f, const Utterance& u);     // canonical|index -> span
Frame from_span_form(const Frame& f, const Utterance& u);   // span -> canonical
Frame to_canonical_form(const Frame& f, const Utterance& u);// any form -> canonical

// Drops every leaf argument, keeping ontology structure. Result is
// form-independent and idempotent.
Frame strip_semantics(const Frame& f);

// Semantic equality over u: both sides resolved to canonical form and
// compared. Frames that fail to resolve (IndexOutOfRange) never match.
bool exact_match(const Frame& pred, const Frame& gold, const Utterance& u);

// Ontology labels of every node, prefix-qualified ("IN:X", "SL:Y"), preorder.
void collect_labels(const FrameNode& n, std::vector<std::string>& out);

int count_leaves(const FrameNode& n);

struct Corpus;  // data.hpp
LengthStats compute_length_stats(const Corpus& corpus, Form form);

}  // namespace spanparse
