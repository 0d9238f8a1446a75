#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "spanparse/data.hpp"
#include "spanparse/inference.hpp"
#include "spanparse/training.hpp"

namespace testutil {

using namespace spanparse;

inline std::string tmp_path(const std::string& name) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("spanparse-tests-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return (dir / (std::to_string(counter++) + "-" + name)).string();
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline SyntheticGrammarConfig tiny_grammar(uint64_t seed) {
  SyntheticGrammarConfig g;
  g.num_intents = 2;
  g.num_slots = 4;
  g.max_depth = 2;
  g.max_slots_per_intent = 2;
  g.span_min = 1;
  g.span_max = 3;
  g.vocab_size = 24;
  g.seed = seed;
  return g;
}

inline ModelConfig small_model_config() {
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_heads = 2;
  mc.n_enc_layers = 2;
  mc.n_dec_layers = 1;
  mc.d_ff = 64;
  mc.max_len_classes = 32;
  mc.max_src_len = 48;
  mc.seed = 1;
  return mc;
}

struct Fixture {
  Corpus corpus;
  Model model;
};

// Shared overfit fixtures: trained once per process, reused by every test
// that needs a model that actually parses.
inline Fixture& overfit_nar() {
  static Fixture fx = [] {
    Corpus c = generate_synthetic(tiny_grammar(21), 40);
    Model m = make_model(small_model_config(), Regime::NAR, Form::Span,
                         build_vocab(c));
    TrainConfig tc;
    tc.lr = 2e-3;
    tc.batch_size = 10;
    tc.max_epochs = 200;
    tc.stop_at_dev_em = 100;
    tc.seed = 1;
    train(m, c, c, tc);
    return Fixture{std::move(c), std::move(m)};
  }();
  return fx;
}

inline Fixture& overfit_ar() {
  static Fixture fx = [] {
    Corpus c = generate_synthetic(tiny_grammar(21), 40);
    Model m = make_model(small_model_config(), Regime::AR, Form::Span,
                         build_vocab(c));
    TrainConfig tc;
    tc.lr = 2e-3;
    tc.batch_size = 10;
    tc.max_epochs = 200;
    tc.stop_at_dev_em = 100;
    tc.seed = 1;
    train(m, c, c, tc);
    return Fixture{std::move(c), std::move(m)};
  }();
  return fx;
}

}  // namespace testutil
