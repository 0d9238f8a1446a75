#pragma once

#include <string>
#include <vector>

#include "spanparse/model.hpp"

namespace spanparse {

struct Candidate {
  Frame frame;            // meaningful only when !malformed; model form
  std::string raw;        // decoded token sequence, space-joined
  bool malformed = false;
  std::string malform_reason;
  int length = 0;              // decoded token count
  double length_logprob = 0;   // 0 for the AR regime
  double mean_token_logprob = 0;
  double score = 0;            // -inf when malformed
};

struct Prediction {
  std::string id;
  Utterance utterance;
  std::vector<Candidate> candidates;  // sorted by score, best first
  int chosen = 0;                     // index into candidates
  int argmax_length = 0;              // top-1 length class (NAR), else 0
};

// Beam-over-lengths: top-k length classes, one argmax decode per length.
// Candidates that fail to parse are kept with score -inf; ties and the
// all-malformed case fall back to length-probability order.
Prediction predict(Model& m, const Utterance& u, int k);

// Left-to-right beam search with BOS/EOS. Beams that reach the 2*L_max cap
// without EOS are finalized as malformed (reason MaxStepsExceeded).
Prediction ar_predict(Model& m, const Utterance& u, int beam);

struct EvalResult {
  double em = 0;              // percent
  double length_acc = 0;      // percent
  double malformed_rate = 0;  // percent over all produced candidates
  size_t n = 0;
};

// Dispatches on m.regime (k = length candidates or beam width). Examples the
// model cannot process (source too long, gold length beyond the model cap)
// count as misses rather than raising.
EvalResult evaluate(Model& m, const Corpus& corpus, int k);

std::vector<Prediction> predict_corpus(Model& m, const Corpus& corpus, int k);

// Line-delimited records: id, chosen canonical + model-form frames, score,
// per-candidate diagnostics. Readable by evaluate_prediction_file.
void write_predictions(const std::vector<Prediction>& preds, Model& m,
                       const std::string& path);

EvalResult evaluate_prediction_file(const std::string& pred_path,
                                    const Corpus& gold);

}  // namespace spanparse
