#include "spanparse/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "json.hpp"

namespace spanparse {

namespace {

using nlohmann::json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double mx = row.maxCoeff();
  return mx + std::log((row.array() - mx).exp().sum());
}

// Decoded row -> (argmax id, its log-probability) without materializing the
// full distribution.
std::pair<int, double> argmax_logprob(
    const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  int best = 0;
  logits.maxCoeff(&best);
  return {best, logits(best) - log_sum_exp(logits)};
}

Candidate finish_candidate(Model& m, const Utterance& u,
                           const std::vector<int>& ids, int length,
                           double length_logprob, double mean_token_logprob,
                           const char* forced_reason) {
  Candidate c;
  c.length = length;
  c.length_logprob = length_logprob;
  c.mean_token_logprob = mean_token_logprob;
  std::string raw;
  for (int id : ids) {
    if (!raw.empty()) raw += ' ';
    raw += m.token_of_id(id);
  }
  c.raw = raw;
  if (forced_reason) {
    c.malformed = true;
    c.malform_reason = forced_reason;
  } else {
    try {
      c.frame = parse_frame(raw, u, m.form);
    } catch (const Error& e) {
      c.malformed = true;
      c.malform_reason = to_string(e.kind());
    }
  }
  c.score = c.malformed ? kNegInf : length_logprob + mean_token_logprob;
  return c;
}

void sort_candidates(Prediction& p) {
  // stable: ties and the all-malformed case keep length-rank order
  std::stable_sort(p.candidates.begin(), p.candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.malformed != b.malformed) return !a.malformed;
                     return a.score > b.score;
                   });
  p.chosen = 0;
}

json candidate_to_json(const Candidate& c, const Utterance& u) {
  json j;
  j["length"] = c.length;
  j["length_logprob"] = c.length_logprob;
  j["mean_token_logprob"] = c.mean_token_logprob;
  j["score"] = c.malformed ? json() : json(c.score);
  j["malformed"] = c.malformed;
  if (c.malformed) {
    j["reason"] = c.malform_reason;
    j["frame"] = c.raw;
    j["canonical"] = nullptr;
  } else {
    j["frame"] = serialize_frame(c.frame);
    j["canonical"] = serialize_frame(to_canonical_form(c.frame, u));
  }
  return j;
}

}  // namespace

Prediction predict(Model& m, const Utterance& u, int k) {
  if (k < 1) fail(ErrorKind::InvalidK, "k must be >= 1");
  if (m.regime != Regime::NAR)
    fail(ErrorKind::ConfigError, "predict drives the one-shot decoder; "
                                 "use ar_predict for the AR baseline");

  Tape t(false);
  const std::vector<int> src = source_ids(m, u);
  EncoderState enc = encode(t, m, src);

  // copy: val() references are invalidated by the decode ops pushed below
  const Mat len_logits = t.val(predict_length_logits(t, m, enc));
  const double len_lse = log_sum_exp(len_logits.row(0));
  const int classes = static_cast<int>(len_logits.cols());

  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return len_logits(0, a) > len_logits(0, b);
  });

  Prediction p;
  p.utterance = u;
  p.argmax_length = order[0] + 1;

  const int kk = std::min(k, classes);
  for (int i = 0; i < kk; ++i) {
    const int ell = order[i] + 1;
    const double len_lp = len_logits(0, order[i]) - len_lse;
    const Mat& logits = t.val(decode_logits(t, m, enc, ell));
    std::vector<int> ids(ell);
    double mean_lp = 0;
    for (int r = 0; r < ell; ++r) {
      auto [id, lp] = argmax_logprob(logits.row(r));
      ids[r] = id;
      mean_lp += lp;
    }
    mean_lp /= ell;
    p.candidates.push_back(
        finish_candidate(m, u, ids, ell, len_lp, mean_lp, nullptr));
  }
  sort_candidates(p);
  return p;
}

Prediction ar_predict(Model& m, const Utterance& u, int beam) {
  if (beam < 1) fail(ErrorKind::InvalidK, "beam must be >= 1");
  if (m.regime != Regime::AR)
    fail(ErrorKind::ConfigError, "ar_predict needs an AR model");

  Tape t(false);
  const std::vector<int> src = source_ids(m, u);
  EncoderState enc = encode(t, m, src);
  const int cap = 2 * m.cfg.max_len_classes;

  struct Beam {
    std::vector<int> ids;
    double sum_lp = 0;
  };
  struct Finished {
    Beam beam;
    bool truncated = false;
    double mean_lp = 0;
  };

  std::vector<Beam> live{Beam{}};
  std::vector<Finished> done;

  while (!live.empty()) {
    struct Expansion {
      double sum;
      size_t from;
      int tok;
      double tok_lp;
    };
    std::vector<Expansion> pool;
    for (size_t b = 0; b < live.size(); ++b) {
      const Mat& logits = t.val(ar_decode_logits(t, m, enc, live[b].ids));
      const Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
      const double lse = log_sum_exp(last);
      // top `beam` continuations of this hypothesis
      std::vector<int> idx(last.cols());
      std::iota(idx.begin(), idx.end(), 0);
      const int keep = std::min<int>(beam, static_cast<int>(idx.size()));
      std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(),
                        [&](int x, int y) { return last(x) > last(y); });
      for (int j = 0; j < keep; ++j) {
        const double lp = last(idx[j]) - lse;
        pool.push_back({live[b].sum_lp + lp, b, idx[j], lp});
      }
    }
    const int keep = std::min<int>(beam, static_cast<int>(pool.size()));
    std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                      [](const Expansion& a, const Expansion& b) {
                        return a.sum > b.sum;
                      });

    std::vector<Beam> next;
    for (int j = 0; j < keep; ++j) {
      const Expansion& e = pool[j];
      Beam nb = live[e.from];
      nb.sum_lp = e.sum;
      if (e.tok == m.eos_id()) {
        const double denom = static_cast<double>(nb.ids.size()) + 1.0;
        done.push_back({std::move(nb), false, e.sum / denom});
      } else {
        nb.ids.push_back(e.tok);
        if (static_cast<int>(nb.ids.size()) >= cap) {
          const double denom = static_cast<double>(nb.ids.size());
          done.push_back({std::move(nb), true, e.sum / denom});
        } else {
          next.push_back(std::move(nb));
        }
      }
    }
    live = std::move(next);
  }

  Prediction p;
  p.utterance = u;
  for (const auto& f : done) {
    p.candidates.push_back(finish_candidate(
        m, u, f.beam.ids, static_cast<int>(f.beam.ids.size()), 0.0, f.mean_lp,
        f.truncated ? to_string(ErrorKind::MaxStepsExceeded) : nullptr));
  }
  sort_candidates(p);
  return p;
}

EvalResult evaluate(Model& m, const Corpus& corpus, int k) {
  EvalResult r;
  r.n = corpus.size();
  if (corpus.empty()) return r;

  size_t em = 0, len_ok = 0, cands = 0, malformed = 0;
  for (const auto& ex : corpus.examples) {
    int ell_star = -1;
    try {
      ell_star = static_cast<int>(target_ids(m, ex.gold, ex.utterance).size());
    } catch (const Error&) {
      // gold not representable (unseen label etc.): length counts as a miss
    }
    try {
      const Prediction p = m.regime == Regime::NAR ? predict(m, ex.utterance, k)
                                                   : ar_predict(m, ex.utterance, k);
      cands += p.candidates.size();
      for (const auto& c : p.candidates) malformed += c.malformed ? 1 : 0;
      const Candidate& chosen = p.candidates[p.chosen];
      if (!chosen.malformed && exact_match(chosen.frame, ex.gold, ex.utterance))
        ++em;
      const int len_pred =
          m.regime == Regime::NAR ? p.argmax_length : chosen.length;
      if (ell_star > 0 && len_pred == ell_star) ++len_ok;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SourceTooLong &&
          e.kind() != ErrorKind::EmptyUtterance)
        throw;  // too-long sources count as misses
    }
  }
  const double n = static_cast<double>(r.n);
  r.em = 100.0 * em / n;
  r.length_acc = 100.0 * len_ok / n;
  r.malformed_rate = cands == 0 ? 0 : 100.0 * malformed / cands;
  return r;
}

std::vector<Prediction> predict_corpus(Model& m, const Corpus& corpus, int k) {
  std::vector<Prediction> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples) {
    Prediction p = m.regime == Regime::NAR ? predict(m, ex.utterance, k)
                                           : ar_predict(m, ex.utterance, k);
    p.id = ex.id;
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions(const std::vector<Prediction>& preds, Model& m,
                       const std::string& path) {
  (void)m;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  for (const auto& p : preds) {
    json j;
    j["id"] = p.id;
    j["utterance"] = p.utterance.text();
    j["form"] = to_string(m.form);
    j["argmax_length"] = p.argmax_length;
    j["chosen"] = candidate_to_json(p.candidates[p.chosen], p.utterance);
    json cands = json::array();
    for (const auto& c : p.candidates)
      cands.push_back(candidate_to_json(c, p.utterance));
    j["candidates"] = cands;
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorKind::IoError, "write failed for " + path);
}

EvalResult evaluate_prediction_file(const std::string& pred_path,
                                    const Corpus& gold) {
  std::ifstream in(pred_path);
  if (!in) fail(ErrorKind::IoError, "cannot open " + pred_path);

  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& ex : gold.examples) by_id[ex.id] = &ex;

  EvalResult r;
  size_t em = 0, cands = 0, malformed = 0, len_ok = 0;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      fail(ErrorKind::MalformedLine,
           pred_path + ":" + std::to_string(lineno) + ": unparseable record");
    }
    const auto it = by_id.find(j.value("id", ""));
    if (it == by_id.end())
      fail(ErrorKind::MalformedLine,
           pred_path + ":" + std::to_string(lineno) + ": unknown example id");
    const Example& ex = *it->second;
    ++r.n;

    for (const auto& c : j.at("candidates")) {
      ++cands;
      if (c.at("malformed").get<bool>()) ++malformed;
    }
    const auto& chosen = j.at("chosen");
    if (!chosen.at("canonical").is_null()) {
      try {
        const Frame f = parse_frame(chosen.at("canonical").get<std::string>(),
                                    ex.utterance, Form::Canonical);
        if (exact_match(f, ex.gold, ex.utterance)) ++em;
      } catch (const Error&) {
        // unparseable prediction counts as a miss
      }
      // gold length in the form the predictions were decoded in
      const Form pform = form_from_string(j.value("form", "canonical"));
      Frame gold_in_form = to_canonical_form(ex.gold, ex.utterance);
      if (pform == Form::Index)
        gold_in_form = to_index_form(gold_in_form, ex.utterance);
      else if (pform == Form::Span)
        gold_in_form = to_span_form(gold_in_form, ex.utterance);
      if (chosen.at("length").get<int>() ==
          static_cast<int>(linearize(gold_in_form).size()))
        ++len_ok;
    }
  }
  if (r.n == 0) return r;
  r.em = 100.0 * em / r.n;
  r.length_acc = 100.0 * len_ok / r.n;
  r.malformed_rate = cands == 0 ? 0 : 100.0 * malformed / cands;
  return r;
}

}  // namespace spanparse
