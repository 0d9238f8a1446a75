#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "spanparse/inference.hpp"

using namespace spanparse;
using testutil::overfit_ar;
using testutil::overfit_nar;
using testutil::tiny_grammar;
using testutil::tmp_path;

TEST_SUITE("inference") {

TEST_CASE("overfit parser reproduces its training set") {
  auto& fx = overfit_nar();
  const EvalResult r = evaluate(fx.model, fx.corpus, 1);
  CHECK(r.em == 100.0);
  CHECK(r.length_acc == 100.0);
  CHECK(r.n == fx.corpus.size());
  CHECK(r.malformed_rate < 5.0);
}

TEST_CASE("beam over lengths: candidates are ranked, distinct and scored") {
  auto& fx = overfit_nar();
  const Example& ex = fx.corpus.examples[0];

  const Prediction p1 = predict(fx.model, ex.utterance, 1);
  REQUIRE(p1.candidates.size() == 1);
  const Prediction p5 = predict(fx.model, ex.utterance, 5);
  REQUIRE(p5.candidates.size() == 5);

  // the argmax-length candidate never gets displaced by adding lengths
  CHECK(p5.candidates[p1.chosen].raw == p1.candidates[0].raw);
  CHECK(p5.argmax_length == p1.argmax_length);
  CHECK(p5.candidates[0].length == p5.argmax_length);

  std::set<int> lengths;
  for (const auto& c : p5.candidates) {
    lengths.insert(c.length);
    CHECK(c.length_logprob <= 0.0);
    CHECK(c.mean_token_logprob <= 0.0);
    if (!c.malformed) {
      CHECK(c.score == c.length_logprob + c.mean_token_logprob);
    } else {
      CHECK(std::isinf(c.score));
    }
  }
  CHECK(lengths.size() == 5);  // one candidate per length class

  for (size_t i = 1; i < p5.candidates.size(); ++i) {
    // well-formed before malformed, scores non-increasing within each group
    const auto& prev = p5.candidates[i - 1];
    const auto& cur = p5.candidates[i];
    CHECK((prev.malformed <= cur.malformed));
    if (prev.malformed == cur.malformed) CHECK(prev.score >= cur.score);
  }

  CHECK_THROWS_AS(predict(fx.model, ex.utterance, 0), Error);
  CHECK_THROWS_AS(ar_predict(fx.model, ex.utterance, 1), Error);
}

TEST_CASE("an untrained model yields malformed candidates, never a crash") {
  Corpus c = generate_synthetic(tiny_grammar(41), 10);
  ModelConfig mc = testutil::small_model_config();
  mc.seed = 77;
  Model m = make_model(mc, Regime::NAR, Form::Span, build_vocab(c));

  for (const auto& ex : c.examples) {
    const Prediction p = predict(m, ex.utterance, 4);
    CHECK(p.candidates.size() == 4);
    CHECK(p.chosen == 0);
    for (const auto& cand : p.candidates)
      if (cand.malformed) {
        CHECK(std::isinf(cand.score));
        CHECK(!cand.malform_reason.empty());
      }
  }
  const EvalResult r = evaluate(m, c, 4);
  CHECK(r.n == 10);
  CHECK(r.malformed_rate >= 0.0);
  CHECK(r.malformed_rate <= 100.0);
}

TEST_CASE("AR beam search decodes the training set and respects beam order") {
  auto& fx = overfit_ar();
  const EvalResult r = evaluate(fx.model, fx.corpus, 1);
  CHECK(r.em == 100.0);

  const Example& ex = fx.corpus.examples[1];
  const Prediction greedy = ar_predict(fx.model, ex.utterance, 1);
  const Prediction beam = ar_predict(fx.model, ex.utterance, 3);
  REQUIRE(!greedy.candidates.empty());
  REQUIRE(!beam.candidates.empty());

  // widening the beam can only improve the best complete hypothesis
  CHECK(beam.candidates[0].score >= greedy.candidates[0].score - 1e-12);
  for (size_t i = 1; i < beam.candidates.size(); ++i)
    if (!beam.candidates[i].malformed && !beam.candidates[i - 1].malformed)
      CHECK(beam.candidates[i - 1].score >= beam.candidates[i].score);

  CHECK(greedy.argmax_length == 0);  // NAR-only diagnostic
  CHECK_THROWS_AS(predict(fx.model, ex.utterance, 1), Error);  // wrong regime
}

TEST_CASE("AR decoding caps runaway hypotheses instead of looping") {
  Corpus c = generate_synthetic(tiny_grammar(43), 8);
  ModelConfig mc = testutil::small_model_config();
  mc.max_len_classes = 4;  // cap = 8 decoder steps
  mc.seed = 13;
  Model m = make_model(mc, Regime::AR, Form::Span, build_vocab(c));

  // untrained: EOS is unlikely, so beams hit the cap and come back marked
  const Prediction p = ar_predict(m, c.examples[0].utterance, 2);
  REQUIRE(!p.candidates.empty());
  bool saw_cap = false;
  for (const auto& cand : p.candidates) {
    CHECK(cand.length <= 8);
    if (cand.malformed &&
        cand.malform_reason == to_string(ErrorKind::MaxStepsExceeded))
      saw_cap = true;
  }
  CHECK(saw_cap);
}

TEST_CASE("evaluate counts unprocessable sources as misses") {
  auto& fx = overfit_nar();
  Corpus c = fx.corpus;
  // an utterance longer than max_src_len cannot be encoded
  Example long_ex = c.examples[0];
  for (int i = 0; i < 60; ++i) long_ex.utterance.tokens.push_back("pad");
  long_ex.id = "too-long";
  c.examples.push_back(long_ex);

  const EvalResult r = evaluate(fx.model, c, 1);
  CHECK(r.n == fx.corpus.size() + 1);
  CHECK(r.em == doctest::Approx(100.0 * fx.corpus.size() / r.n));
}

TEST_CASE("prediction files round trip and score identically offline") {
  auto& fx = overfit_nar();
  const auto preds = predict_corpus(fx.model, fx.corpus, 3);
  REQUIRE(preds.size() == fx.corpus.size());
  const std::string path = tmp_path("preds.jsonl");
  write_predictions(preds, fx.model, path);

  const EvalResult online = evaluate(fx.model, fx.corpus, 3);
  const EvalResult offline = evaluate_prediction_file(path, fx.corpus);
  CHECK(offline.n == online.n);
  CHECK(offline.em == online.em);
  CHECK(offline.length_acc == online.length_acc);
  CHECK(offline.malformed_rate == online.malformed_rate);

  // unknown ids and garbage lines are hard errors
  {
    const std::string bad = tmp_path("unknown-id.jsonl");
    std::ofstream(bad)
        << R"({"id":"nope","candidates":[],"chosen":{"canonical":null}})"
        << "\n";  // temporary stream: closed, hence flushed, before the read
    CHECK_THROWS_AS(evaluate_prediction_file(bad, fx.corpus), Error);
  }
  {
    const std::string bad = tmp_path("garbage.jsonl");
    std::ofstream(bad) << "not json at all\n";
    CHECK_THROWS_AS(evaluate_prediction_file(bad, fx.corpus), Error);
  }
  CHECK_THROWS_AS(evaluate_prediction_file(tmp_path("absent.jsonl"), fx.corpus),
                  Error);
}

}  // TEST_SUITE
