#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "spanparse/data.hpp"
#include "spanparse/frame.hpp"

using namespace spanparse;

namespace {

Utterance utt(const std::string& s) { return whitespace_tokenize(s); }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::IoError;
}

}  // namespace

TEST_SUITE("frame") {

// The worked messaging example: every expected value below was computed by
// hand from the three encodings of the same frame.
//
//   tokens:  message(0) I'll(1) be(2) there(3) at(4) 6pm(5)
TEST_CASE("worked example: canonical, index and span encodings") {
  const Utterance u = utt("message I'll be there at 6pm");
  const std::string canonical =
      "[IN:SEND_MESSAGE [SL:CONTENT I'll be there at 6pm ] ]";

  const Frame f = parse_frame(canonical, u, Form::Canonical);
  CHECK(linearize(f).size() == 9);
  CHECK(serialize_frame(f) == canonical);

  const Frame idx = to_index_form(f, u);
  CHECK(serialize_frame(idx) == "[IN:SEND_MESSAGE [SL:CONTENT 1 2 3 4 5 ] ]");
  CHECK(linearize(idx).size() == 9);  // five indices, same count as the words

  const Frame span = to_span_form(f, u);
  CHECK(serialize_frame(span) == "[IN:SEND_MESSAGE [SL:CONTENT 1 5 ] ]");
  CHECK(linearize(span).size() == 6);
  const LeafArg& leaf = *span.root.children[0].leaf;
  CHECK(leaf.start == 1);
  CHECK(leaf.end == 5);

  // resolving back is exact
  CHECK(from_span_form(span, u) == f);
  CHECK(to_canonical_form(idx, u) == f);
  CHECK(exact_match(span, f, u));
  CHECK(exact_match(idx, f, u));
}

TEST_CASE("serialize then parse is the identity") {
  const Utterance u = utt("set an alarm for six in the morning please");
  const std::vector<std::string> frames = {
      "[IN:CREATE_ALARM ]",
      "[IN:CREATE_ALARM [SL:DATE_TIME for six in the morning ] ]",
      "[IN:CREATE_ALARM [SL:DATE_TIME six ] [SL:ORDINAL morning ] ]",
      "[IN:A [SL:B [IN:C [SL:D please ] ] ] [SL:E alarm ] ]",
      "[IN:A [SL:B ] ]",  // slot with no argument
  };
  for (const auto& s : frames) {
    const Frame f = parse_frame(s, u, Form::Canonical);
    CHECK(serialize_frame(f) == s);
    CHECK(parse_frame(serialize_frame(f), u, Form::Canonical) == f);
  }
}

TEST_CASE("parser rejects what the grammar forbids") {
  const Utterance u = utt("a b c d");
  auto parse = [&](const std::string& s, Form form) {
    return [&u, s, form] { parse_frame(s, u, form); };
  };

  CHECK(kind_of(parse("[IN:A", Form::Canonical)) ==
        ErrorKind::UnbalancedBrackets);
  CHECK(kind_of(parse("[IN:A ] ]", Form::Canonical)) ==
        ErrorKind::UnbalancedBrackets);
  CHECK(kind_of(parse("[FOO:A ]", Form::Canonical)) ==
        ErrorKind::UnknownOntologyPrefix);
  CHECK(kind_of(parse("[IN: ]", Form::Canonical)) ==
        ErrorKind::UnknownOntologyPrefix);
  CHECK(kind_of(parse("a", Form::Canonical)) == ErrorKind::InvalidStructure);
  CHECK(kind_of(parse("[SL:A ]", Form::Canonical)) ==
        ErrorKind::InvalidStructure);
  CHECK(kind_of(parse("[IN:A [IN:B ] ]", Form::Canonical)) ==
        ErrorKind::InvalidStructure);
  CHECK(kind_of(parse("[IN:A a ]", Form::Canonical)) ==
        ErrorKind::InvalidStructure);
  CHECK(kind_of(parse("[IN:A [SL:B [SL:C ] ] ]", Form::Canonical)) ==
        ErrorKind::InvalidStructure);
  CHECK(kind_of(parse("[IN:A [SL:B a [IN:C ] ] ]", Form::Canonical)) ==
        ErrorKind::MalformedLeaf);

  CHECK(kind_of(parse("[IN:A [SL:B 1 ] ]", Form::Span)) ==
        ErrorKind::MalformedLeaf);
  CHECK(kind_of(parse("[IN:A [SL:B 1 2 3 ] ]", Form::Span)) ==
        ErrorKind::MalformedLeaf);
  CHECK(kind_of(parse("[IN:A [SL:B 2 1 ] ]", Form::Span)) ==
        ErrorKind::MalformedLeaf);
  CHECK(kind_of(parse("[IN:A [SL:B x 2 ] ]", Form::Span)) ==
        ErrorKind::MalformedLeaf);
  CHECK(kind_of(parse("[IN:A [SL:B 1 9 ] ]", Form::Span)) ==
        ErrorKind::IndexOutOfRange);
  CHECK(kind_of(parse("[IN:A [SL:B 1 3 ] ]", Form::Index)) ==
        ErrorKind::MalformedLeaf);  // indices must be contiguous
  CHECK(kind_of(parse("[IN:A [SL:B 9 ] ]", Form::Index)) ==
        ErrorKind::IndexOutOfRange);
}

TEST_CASE("index alignment is left to right with leftmost fallback") {
  const Utterance u = utt("a b a b");

  // repeated phrase: second occurrence starts after the first match
  Frame f = parse_frame("[IN:X [SL:P a b ] [SL:Q a b ] ]", u, Form::Canonical);
  Frame idx = to_index_form(f, u);
  CHECK(serialize_frame(idx) == "[IN:X [SL:P 0 1 ] [SL:Q 2 3 ] ]");

  // cursor advances past each match
  f = parse_frame("[IN:X [SL:P b a ] [SL:Q b ] ]", u, Form::Canonical);
  idx = to_index_form(f, u);
  CHECK(serialize_frame(idx) == "[IN:X [SL:P 1 2 ] [SL:Q 3 ] ]");

  // nothing left after the cursor: fall back to the leftmost occurrence
  f = parse_frame("[IN:X [SL:P a b a b ] [SL:Q a b ] ]", u, Form::Canonical);
  idx = to_index_form(f, u);
  CHECK(serialize_frame(idx) == "[IN:X [SL:P 0 1 2 3 ] [SL:Q 0 1 ] ]");

  f = parse_frame("[IN:X [SL:P zz ] ]", utt("a zz b"), Form::Canonical);
  CHECK_THROWS_AS(to_index_form(f, u), Error);  // "zz" not in "a b a b"
}

TEST_CASE("strip_semantics removes arguments and is idempotent") {
  const Utterance u = utt("play something by the beatles");
  const Frame f = parse_frame(
      "[IN:PLAY_MUSIC [SL:ARTIST the beatles ] [SL:TYPE something ] ]", u,
      Form::Canonical);
  const Frame skel = strip_semantics(f);
  CHECK(serialize_frame(skel) ==
        "[IN:PLAY_MUSIC [SL:ARTIST ] [SL:TYPE ] ]");
  CHECK(strip_semantics(skel) == skel);

  // all three encodings share one skeleton
  CHECK(strip_semantics(to_span_form(f, u)) == skel);
  CHECK(strip_semantics(to_index_form(f, u)) == skel);
}

TEST_CASE("exact_match resolves forms and rejects bad spans") {
  const Utterance u = utt("call my mom now");
  const Frame f =
      parse_frame("[IN:CALL [SL:CONTACT my mom ] ]", u, Form::Canonical);
  const Frame g =
      parse_frame("[IN:CALL [SL:CONTACT my dad ] ]", utt("call my dad now"),
                  Form::Canonical);
  CHECK(exact_match(f, to_span_form(f, u), u));
  CHECK(!exact_match(f, g, u));

  // span beyond the utterance: a non-match, not an error
  Frame bad = to_span_form(f, u);
  bad.root.children[0].leaf->start = 2;
  bad.root.children[0].leaf->end = 17;
  CHECK(!exact_match(bad, f, u));
}

TEST_CASE("length statistics per skeleton") {
  // one skeleton, two canonical lengths (leaf of 1 vs 2 words)
  Corpus c;
  {
    Example e;
    e.utterance = utt("call mom");
    e.gold = parse_frame("[IN:CALL [SL:WHO mom ] ]", e.utterance,
                         Form::Canonical);
    e.id = "a";
    c.examples.push_back(e);
  }
  {
    Example e;
    e.utterance = utt("call my mom");
    e.gold = parse_frame("[IN:CALL [SL:WHO my mom ] ]", e.utterance,
                         Form::Canonical);
    e.id = "b";
    c.examples.push_back(e);
  }

  const LengthStats canon = compute_length_stats(c, Form::Canonical);
  CHECK(canon.num_length_classes == 2);
  CHECK(canon.mean_lengths_per_skeleton == doctest::Approx(2.0));
  CHECK(canon.mean_length == doctest::Approx(5.5));
  CHECK(canon.max_length == 6);

  // span form: a skeleton has exactly one length, whatever the spans are
  const LengthStats span = compute_length_stats(c, Form::Span);
  CHECK(span.num_length_classes == 1);
  CHECK(span.mean_lengths_per_skeleton == doctest::Approx(1.0));
  CHECK(span.max_length == 6);

  CHECK(compute_length_stats(Corpus{}, Form::Span).num_length_classes == 0);
}

TEST_CASE("collect_labels and count_leaves") {
  const Utterance u = utt("a b c");
  const Frame f = parse_frame("[IN:X [SL:P a ] [SL:Q [IN:Y [SL:P b ] ] ] ]", u,
                              Form::Canonical);
  CHECK(count_leaves(f.root) == 2);
  std::vector<std::string> labels;
  collect_labels(f.root, labels);
  // preorder, duplicates kept: IN:X SL:P SL:Q IN:Y SL:P
  const std::vector<std::string> expect = {"IN:X", "SL:P", "SL:Q", "IN:Y",
                                           "SL:P"};
  CHECK(labels == expect);
}

TEST_CASE("form names round trip") {
  for (Form f : {Form::Canonical, Form::Index, Form::Span})
    CHECK(form_from_string(to_string(f)) == f);
  CHECK_THROWS_AS(form_from_string("pointer"), Error);
}

}  // TEST_SUITE
