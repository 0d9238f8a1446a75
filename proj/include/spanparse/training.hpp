#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "spanparse/model.hpp"

namespace spanparse {

// Confidence-penalty smoothing (negative entropy) is the default; Uniform
// switches to cross-entropy against the uniform distribution.
enum class SmoothingMode { Entropy, Uniform };

SmoothingMode smoothing_from_string(const std::string& s);

struct TrainConfig {
  double lambda1 = 0.5;    // length-loss weight in the combined objective
  double lambda2 = 0.001;  // consistency term weight, length head
  double lambda3 = 0.01;   // consistency term weight, decoder
  double beta1 = 0.1;      // smoothing coefficient inside the length loss
  double beta2 = 0.1;      // smoothing coefficient inside the label loss
  double sigma = 0.01;     // half-width of the uniform embedding noise
  bool r3f = false;        // enable the noise-consistency terms
  SmoothingMode smoothing = SmoothingMode::Entropy;
  double lr = 1e-3;
  double plateau_factor = 0.5;  // lr multiplier when dev EM plateaus
  int plateau_patience = 10;    // epochs without improvement before decay
  double min_lr = 1e-5;
  int batch_size = 16;
  int max_epochs = 100;
  double stop_at_dev_em = -1.0;  // early-stop threshold in percent; <0 = off
  uint64_t seed = 1;

  void validate() const;
};

struct LossComponents {
  double label = 0;
  double length = 0;
  double r3f_length = 0;
  double r3f_label = 0;
};

// label + lambda1*length + lambda2*r3f_length + lambda3*r3f_label.
// Throws NonFiniteLoss when any component or the sum is not finite.
double total_loss(const LossComponents& c, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double label_loss = 0;
  double length_loss = 0;
  double r3f_length = 0;
  double r3f_label = 0;
  double total = 0;
  double dev_em = 0;        // percent
  double dev_length_acc = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_dev_em = 0;
  double final_dev_length_acc = 0;
  double seconds = 0;
};

// Mean NLL over rows of logits, plus beta2 times the smoothing term.
Var label_loss(Tape& t, Var logits, const std::vector<int>& targets,
               double beta2, SmoothingMode mode);

// NLL of gold length ell_star under 1 x max_len_classes logits (class c is
// length c+1), plus beta1 times the smoothing term.
Var length_loss(Tape& t, Var length_logits, int ell_star, double beta1,
                SmoothingMode mode);

// Standalone consistency terms over a batch with frozen noise draws:
// (length term, decoder term), each averaged over examples. sigma == 0
// short-circuits to exactly (0, 0): the noise distribution degenerates to
// zero and both divergences vanish identically.
std::pair<double, double> r3f_terms(Model& m, const std::vector<Example>& batch,
                                    double sigma, uint64_t noise_seed);

TrainReport train(Model& m, const Corpus& train_corpus, const Corpus& dev_corpus,
                  const TrainConfig& cfg);

// Central-difference check of the full objective (consistency terms included
// when cfg.r3f) with frozen noise. Dropout is forced off: the check needs a
// deterministic, smooth loss. Returns the max relative error over all
// parameter elements.
double grad_check(Model& m, const TrainConfig& cfg,
                  const std::vector<Example>& batch, double epsilon);

}  // namespace spanparse
