#include "spanparse/frame.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>

#include "spanparse/data.hpp"

namespace spanparse {

namespace {

constexpr const char* kIntentPrefix = "[IN:";
constexpr const char* kSlotPrefix = "[SL:";

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool is_uint(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

struct Cursor {
  const std::vector<std::string>& toks;
  size_t pos = 0;

  bool done() const { return pos >= toks.size(); }
  const std::string& peek() const { return toks[pos]; }
  const std::string& take() { return toks[pos++]; }
};

void check_bounds(int i, int n) {
  if (i < 0 || i >= n)
    fail(ErrorKind::IndexOutOfRange,
         "token index " + std::to_string(i) + " outside utterance of length " +
             std::to_string(n));
}

LeafArg make_leaf(const std::vector<std::string>& args, const Utterance& u,
                  Form form, const std::string& slot) {
  switch (form) {
    case Form::Canonical:
      return LeafArg::of_text(args);
    case Form::Index: {
      std::vector<int> ix;
      for (const auto& a : args) {
        if (!is_uint(a))
          fail(ErrorKind::MalformedLeaf,
               "slot " + slot + ": index form requires integer tokens, got '" +
                   a + "'");
        ix.push_back(std::stoi(a));
      }
      for (size_t i = 1; i < ix.size(); ++i)
        if (ix[i] != ix[i - 1] + 1)
          fail(ErrorKind::MalformedLeaf,
               "slot " + slot + ": indices must form a contiguous run");
      for (int i : ix) check_bounds(i, u.size());
      return LeafArg::of_indices(ix);
    }
    case Form::Span: {
      if (args.size() != 2 || !is_uint(args[0]) || !is_uint(args[1]))
        fail(ErrorKind::MalformedLeaf,
             "slot " + slot + ": span form requires exactly two integers");
      int s = std::stoi(args[0]), e = std::stoi(args[1]);
      if (s > e)
        fail(ErrorKind::MalformedLeaf,
             "slot " + slot + ": span start exceeds end");
      check_bounds(s, u.size());
      check_bounds(e, u.size());
      return LeafArg::of_span(s, e);
    }
  }
  fail(ErrorKind::ConfigError, "unreachable form");
}

FrameNode parse_intent(Cursor& cur, const Utterance& u, Form form);

FrameNode parse_slot(Cursor& cur, const Utterance& u, Form form) {
  const std::string open = cur.take();
  FrameNode node;
  node.kind = NodeKind::Slot;
  node.name = open.substr(4);
  if (node.name.empty())
    fail(ErrorKind::UnknownOntologyPrefix, "slot token with empty name");

  std::vector<std::string> args;
  while (true) {
    if (cur.done())
      fail(ErrorKind::UnbalancedBrackets, "slot " + node.name + " never closed");
    const std::string& t = cur.peek();
    if (t == "]") {
      cur.take();
      break;
    }
    if (t.rfind(kIntentPrefix, 0) == 0) {
      if (!args.empty())
        fail(ErrorKind::MalformedLeaf,
             "slot " + node.name + " mixes leaf tokens with nested intents");
      node.children.push_back(parse_intent(cur, u, form));
      continue;
    }
    if (t.rfind(kSlotPrefix, 0) == 0)
      fail(ErrorKind::InvalidStructure,
           "slot " + node.name + " cannot contain a slot");
    if (t[0] == '[')
      fail(ErrorKind::UnknownOntologyPrefix, "unknown open token '" + t + "'");
    if (!node.children.empty())
      fail(ErrorKind::MalformedLeaf,
           "slot " + node.name + " mixes nested intents with leaf tokens");
    args.push_back(cur.take());
  }
  if (!args.empty()) node.leaf = make_leaf(args, u, form, node.name);
  return node;
}

FrameNode parse_intent(Cursor& cur, const Utterance& u, Form form) {
  const std::string open = cur.take();
  FrameNode node;
  node.kind = NodeKind::Intent;
  node.name = open.substr(4);
  if (node.name.empty())
    fail(ErrorKind::UnknownOntologyPrefix, "intent token with empty name");

  while (true) {
    if (cur.done())
      fail(ErrorKind::UnbalancedBrackets,
           "intent " + node.name + " never closed");
    const std::string& t = cur.peek();
    if (t == "]") {
      cur.take();
      break;
    }
    if (t.rfind(kSlotPrefix, 0) == 0) {
      node.children.push_back(parse_slot(cur, u, form));
      continue;
    }
    if (t.rfind(kIntentPrefix, 0) == 0)
      fail(ErrorKind::InvalidStructure,
           "intent " + node.name + " cannot directly contain an intent");
    if (t[0] == '[')
      fail(ErrorKind::UnknownOntologyPrefix, "unknown open token '" + t + "'");
    fail(ErrorKind::InvalidStructure,
         "intent " + node.name + " cannot carry leaf tokens (got '" + t + "')");
  }
  return node;
}

void linearize_node(const FrameNode& n, std::vector<std::string>& out) {
  out.push_back((n.kind == NodeKind::Intent ? kIntentPrefix : kSlotPrefix) +
                n.name);
  if (n.leaf) {
    const LeafArg& a = *n.leaf;
    switch (a.form) {
      case Form::Canonical:
        for (const auto& t : a.text) out.push_back(t);
        break;
      case Form::Index:
        for (int i : a.indices) out.push_back(std::to_string(i));
        break;
      case Form::Span:
        out.push_back(std::to_string(a.start));
        out.push_back(std::to_string(a.end));
        break;
    }
  }
  for (const auto& c : n.children) linearize_node(c, out);
  out.push_back("]");
}

// Leftmost occurrence of `needle` as a token run in u at position >= from.
int find_run(const Utterance& u, const std::vector<std::string>& needle,
             int from) {
  const int n = u.size(), len = static_cast<int>(needle.size());
  for (int i = std::max(from, 0); i + len <= n; ++i) {
    bool hit = true;
    for (int j = 0; j < len; ++j)
      if (u.tokens[i + j] != needle[j]) {
        hit = false;
        break;
      }
    if (hit) return i;
  }
  return -1;
}

// Aligns canonical leaves in frame order. Each search resumes after the end
// of the previous leaf's alignment; if nothing matches there, the leftmost
// match anywhere is taken. Deterministic by construction.
void align_node(FrameNode& n, const Utterance& u, int& cursor) {
  if (n.leaf) {
    LeafArg& a = *n.leaf;
    if (a.form != Form::Canonical)
      fail(ErrorKind::InvalidStructure,
           "alignment expects canonical leaves, slot " + n.name + " is " +
               to_string(a.form));
    if (a.text.empty())
      fail(ErrorKind::MalformedLeaf, "slot " + n.name + " has an empty leaf");
    int at = find_run(u, a.text, cursor);
    if (at < 0) at = find_run(u, a.text, 0);
    if (at < 0) {
      std::string joined;
      for (const auto& t : a.text) joined += (joined.empty() ? "" : " ") + t;
      fail(ErrorKind::AlignmentFailure,
           "slot " + n.name + ": leaf '" + joined +
               "' does not occur in the utterance");
    }
    std::vector<int> ix(a.text.size());
    for (size_t j = 0; j < ix.size(); ++j) ix[j] = at + static_cast<int>(j);
    cursor = at + static_cast<int>(ix.size());
    a = LeafArg::of_indices(std::move(ix));
  }
  for (auto& c : n.children) align_node(c, u, cursor);
}

void spanify_node(FrameNode& n) {
  if (n.leaf) {
    LeafArg& a = *n.leaf;
    if (a.form == Form::Index)
      a = LeafArg::of_span(a.indices.front(), a.indices.back());
  }
  for (auto& c : n.children) spanify_node(c);
}

void canonicalize_node(FrameNode& n, const Utterance& u) {
  if (n.leaf) {
    LeafArg& a = *n.leaf;
    if (a.form == Form::Index) {
      std::vector<std::string> text;
      for (int i : a.indices) {
        check_bounds(i, u.size());
        text.push_back(u.tokens[i]);
      }
      a = LeafArg::of_text(std::move(text));
    } else if (a.form == Form::Span) {
      check_bounds(a.start, u.size());
      check_bounds(a.end, u.size());
      std::vector<std::string> text;
      for (int i = a.start; i <= a.end; ++i) text.push_back(u.tokens[i]);
      a = LeafArg::of_text(std::move(text));
    }
  }
  for (auto& c : n.children) canonicalize_node(c, u);
}

void strip_node(FrameNode& n) {
  n.leaf.reset();
  for (auto& c : n.children) strip_node(c);
}

}  // namespace

const char* to_string(Form f) {
  switch (f) {
    case Form::Canonical: return "canonical";
    case Form::Index: return "index";
    case Form::Span: return "span";
  }
  return "?";
}

Form form_from_string(const std::string& s) {
  if (s == "canonical") return Form::Canonical;
  if (s == "index") return Form::Index;
  if (s == "span") return Form::Span;
  fail(ErrorKind::ConfigError, "unknown form '" + s + "'");
}

std::string Utterance::text() const {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

LeafArg LeafArg::of_text(std::vector<std::string> t) {
  LeafArg a;
  a.form = Form::Canonical;
  a.text = std::move(t);
  return a;
}

LeafArg LeafArg::of_indices(std::vector<int> ix) {
  LeafArg a;
  a.form = Form::Index;
  a.indices = std::move(ix);
  return a;
}

LeafArg LeafArg::of_span(int start, int end) {
  LeafArg a;
  a.form = Form::Span;
  a.start = start;
  a.end = end;
  return a;
}

Frame parse_frame(const std::string& s, const Utterance& u, Form form) {
  const auto toks = split_ws(s);
  if (toks.empty()) fail(ErrorKind::InvalidStructure, "empty frame string");
  Cursor cur{toks};
  if (cur.peek().rfind(kIntentPrefix, 0) != 0) {
    if (cur.peek().rfind(kSlotPrefix, 0) == 0)
      fail(ErrorKind::InvalidStructure, "frame root must be an intent");
    if (cur.peek()[0] == '[')
      fail(ErrorKind::UnknownOntologyPrefix,
           "unknown open token '" + cur.peek() + "'");
    fail(ErrorKind::InvalidStructure,
         "frame must start with an intent open token");
  }
  Frame f;
  f.form = form;
  f.root = parse_intent(cur, u, form);
  if (!cur.done())
    fail(ErrorKind::UnbalancedBrackets,
         "trailing tokens after frame close ('" + cur.peek() + "')");
  return f;
}

std::vector<std::string> linearize(const Frame& f) {
  std::vector<std::string> out;
  linearize_node(f.root, out);
  return out;
}

std::string serialize_frame(const Frame& f) {
  const auto toks = linearize(f);
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

Frame to_index_form(const Frame& f, const Utterance& u) {
  if (f.form != Form::Canonical)
    fail(ErrorKind::InvalidStructure, "to_index_form expects canonical input");
  Frame out = f;
  int cursor = 0;
  align_node(out.root, u, cursor);
  out.form = Form::Index;
  return out;
}

Frame to_span_form(const Frame& f, const Utterance& u) {
  Frame out = f.form == Form::Canonical ? to_index_form(f, u) : f;
  if (out.form == Form::Span) return out;
  spanify_node(out.root);
  out.form = Form::Span;
  return out;
}

Frame from_span_form(const Frame& f, const Utterance& u) {
  if (f.form != Form::Span)
    fail(ErrorKind::InvalidStructure, "from_span_form expects span input");
  return to_canonical_form(f, u);
}

Frame to_canonical_form(const Frame& f, const Utterance& u) {
  Frame out = f;
  canonicalize_node(out.root, u);
  out.form = Form::Canonical;
  return out;
}

Frame strip_semantics(const Frame& f) {
  Frame out = f;
  strip_node(out.root);
  out.form = Form::Canonical;  // a skeleton has no leaves; normalize the tag
  return out;
}

bool exact_match(const Frame& pred, const Frame& gold, const Utterance& u) {
  try {
    return serialize_frame(to_canonical_form(pred, u)) ==
           serialize_frame(to_canonical_form(gold, u));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IndexOutOfRange) return false;
    throw;
  }
}

void collect_labels(const FrameNode& n, std::vector<std::string>& out) {
  out.push_back((n.kind == NodeKind::Intent ? "IN:" : "SL:") + n.name);
  for (const auto& c : n.children) collect_labels(c, out);
}

int count_leaves(const FrameNode& n) {
  int k = n.leaf ? 1 : 0;
  for (const auto& c : n.children) k += count_leaves(c);
  return k;
}

LengthStats compute_length_stats(const Corpus& corpus, Form form) {
  LengthStats st;
  if (corpus.examples.empty()) return st;

  std::set<int> classes;
  std::unordered_map<std::string, std::set<int>> per_skeleton;
  long long sum = 0;

  for (const auto& ex : corpus.examples) {
    Frame gold = ex.gold.form == Form::Canonical
                     ? ex.gold
                     : to_canonical_form(ex.gold, ex.utterance);
    Frame f = gold;
    if (form == Form::Index) f = to_index_form(gold, ex.utterance);
    else if (form == Form::Span) f = to_span_form(gold, ex.utterance);

    const int len = static_cast<int>(linearize(f).size());
    classes.insert(len);
    per_skeleton[serialize_frame(strip_semantics(gold))].insert(len);
    sum += len;
    st.max_length = std::max(st.max_length, len);
  }

  st.num_length_classes = static_cast<int>(classes.size());
  double acc = 0;
  for (const auto& [_, lens] : per_skeleton) acc += static_cast<double>(lens.size());
  st.mean_lengths_per_skeleton = acc / static_cast<double>(per_skeleton.size());
  st.mean_length = static_cast<double>(sum) / corpus.examples.size();
  return st;
}

const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::UnbalancedBrackets: return "UnbalancedBrackets";
    case ErrorKind::UnknownOntologyPrefix: return "UnknownOntologyPrefix";
    case ErrorKind::MalformedLeaf: return "MalformedLeaf";
    case ErrorKind::InvalidStructure: return "InvalidStructure";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::AlignmentFailure: return "AlignmentFailure";
    case ErrorKind::EmptyUtterance: return "EmptyUtterance";
    case ErrorKind::InvalidToken: return "InvalidToken";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::InvalidK: return "InvalidK";
    case ErrorKind::SourceTooLong: return "SourceTooLong";
    case ErrorKind::LengthOutOfRange: return "LengthOutOfRange";
    case ErrorKind::TargetOutOfVocab: return "TargetOutOfVocab";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::MaxStepsExceeded: return "MaxStepsExceeded";
  }
  return "?";
}

}  // namespace spanparse
