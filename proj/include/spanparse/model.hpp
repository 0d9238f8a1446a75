#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spanparse/data.hpp"
#include "spanparse/tensor.hpp"

namespace spanparse {

// NAR fills all target positions in one decoder call after a length is
// chosen; AR is the left-to-right baseline with BOS/EOS and beam search.
enum class Regime { NAR, AR };

const char* to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 1;
  int d_ff = 128;
  int max_len_classes = 48;  // longest predictable linearized target
  int max_src_len = 64;
  double dropout = 0.0;
  uint64_t seed = 1;

  void validate() const;
};

// Output-id layout over a source of length n:
//   span/index targets: [0, G) generation tokens, then n copy positions,
//     where G = |ontology|. Copy id G+i realizes the index token "i".
//   canonical targets:  [0, G) with G = |ontology| + |source words|; no copy
//     block (pure text generation).
// The AR regime inserts EOS at id G, shifting the copy block by one.
struct Model {
  ModelConfig cfg;
  Regime regime = Regime::NAR;
  Form form = Form::Span;
  Vocabulary vocab;
  ParamSet params;
  Mat src_pos;  // fixed sinusoidal source positions, max_src_len x d_model

  bool uses_copy() const { return form != Form::Canonical; }
  int onto_width() const { return static_cast<int>(vocab.ontology_tokens.size()); }
  int gen_width() const;
  int eos_id() const { return gen_width(); }  // AR only
  int output_width(int n) const;

  // Output id <-> target token string (integer literals for copy ids).
  int target_token_id(const std::string& tok, int n) const;
  std::string token_of_id(int id) const;
};

Model make_model(const ModelConfig& cfg, Regime regime, Form form,
                 const Vocabulary& vocab);

int64_t count_params(const Model& m);

struct EncoderState {
  Var hidden;  // n x d_model
  Var pooled;  // 1 x d_model, mean over positions
  int n = 0;
};

std::vector<int> source_ids(const Model& m, const Utterance& u);

// Gold target token ids in the model's output-id space (model.form decides
// the linearization; AR callers append eos_id themselves).
std::vector<int> target_ids(const Model& m, const Frame& gold,
                            const Utterance& u);

// `noise`, when given, is added to the scaled token embeddings (n x d).
EncoderState encode(Tape& t, Model& m, const std::vector<int>& src_ids,
                    const Mat* noise = nullptr,
                    std::mt19937_64* dropout_rng = nullptr);

Var predict_length_logits(Tape& t, Model& m, const EncoderState& enc);

// One-shot decoder over ell masked positions; rows are positions, columns
// follow the output-id layout for enc.n.
Var decode_logits(Tape& t, Model& m, const EncoderState& enc, int ell,
                  std::mt19937_64* dropout_rng = nullptr);

// Causal decoder logits for BOS + prefix (prefix in output-id space).
// Row t predicts the token after the first t+1 inputs.
Var ar_decode_logits(Tape& t, Model& m, const EncoderState& enc,
                     const std::vector<int>& prefix,
                     std::mt19937_64* dropout_rng = nullptr);

// Bilinear copy scores dec * Wcpy * enc^T, exposed for grounding tests.
Var copy_scores(Tape& t, Model& m, Var dec, Var enc_hidden);

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace spanparse
