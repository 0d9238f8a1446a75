#include "spanparse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "spanparse/inference.hpp"

namespace spanparse {

namespace {

struct Prepared {
  std::vector<int> src;
  std::vector<int> tgt;  // output-id space, no EOS
  int ell = 0;           // gold linearized length
};

Prepared prepare(const Model& m, const Example& ex) {
  Prepared p;
  p.src = source_ids(m, ex.utterance);
  p.tgt = target_ids(m, ex.gold, ex.utterance);
  p.ell = static_cast<int>(p.tgt.size());
  return p;
}

Mat draw_noise(int rows, int cols, double sigma, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-sigma, sigma);
  Mat z(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) z(r, c) = d(rng);
  return z;
}

struct BuiltLoss {
  Var total;
  LossComponents parts;
};

// One example's objective on one tape. `noise` enables the consistency
// terms; the noised pass never uses dropout so the sigma -> 0 limit stays
// exact.
BuiltLoss build_loss(Tape& t, Model& m, const Prepared& ex,
                     const TrainConfig& cfg, const Mat* noise,
                     std::mt19937_64* drop_rng) {
  BuiltLoss out;
  EncoderState enc = encode(t, m, ex.src, nullptr, drop_rng);

  Var lab;
  Var len;
  bool has_len = m.regime == Regime::NAR;
  Var len_logits;
  Var dec_logits;

  if (m.regime == Regime::NAR) {
    len_logits = predict_length_logits(t, m, enc);
    len = length_loss(t, len_logits, ex.ell, cfg.beta1, cfg.smoothing);
    dec_logits = decode_logits(t, m, enc, ex.ell, drop_rng);
    lab = label_loss(t, dec_logits, ex.tgt, cfg.beta2, cfg.smoothing);
  } else {
    dec_logits = ar_decode_logits(t, m, enc, ex.tgt, drop_rng);
    std::vector<int> targets = ex.tgt;
    targets.push_back(m.eos_id());
    lab = label_loss(t, dec_logits, targets, cfg.beta2, cfg.smoothing);
  }

  Var total = lab;
  if (has_len) total = t.add_scaled(lab, len, cfg.lambda1);

  if (noise) {
    EncoderState enc2 = encode(t, m, ex.src, noise, nullptr);
    if (m.regime == Regime::NAR) {
      Var kl_len = t.kl_sym(t.log_softmax_rows(len_logits),
                            t.log_softmax_rows(predict_length_logits(t, m, enc2)));
      Var kl_lab = t.kl_sym(
          t.log_softmax_rows(dec_logits),
          t.log_softmax_rows(decode_logits(t, m, enc2, ex.ell, nullptr)));
      total = t.add_scaled(total, kl_len, cfg.lambda2);
      total = t.add_scaled(total, kl_lab, cfg.lambda3);
      out.parts.r3f_length = t.val(kl_len)(0, 0);
      out.parts.r3f_label = t.val(kl_lab)(0, 0);
    } else {
      Var kl_lab = t.kl_sym(
          t.log_softmax_rows(dec_logits),
          t.log_softmax_rows(ar_decode_logits(t, m, enc2, ex.tgt, nullptr)));
      total = t.add_scaled(total, kl_lab, cfg.lambda3);
      out.parts.r3f_label = t.val(kl_lab)(0, 0);
    }
  }

  out.total = total;
  out.parts.label = t.val(lab)(0, 0);
  if (has_len) out.parts.length = t.val(len)(0, 0);
  return out;
}

void adam_step(ParamSet& params, double lr, int64_t step) {
  static const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, double(step));
  const double bc2 = 1.0 - std::pow(b2, double(step));
  for (auto& p : params.tensors) {
    p.m = b1 * p.m + (1.0 - b1) * p.grad;
    p.v = b2 * p.v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -=
        lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + eps);
  }
}

}  // namespace

SmoothingMode smoothing_from_string(const std::string& s) {
  if (s == "entropy") return SmoothingMode::Entropy;
  if (s == "uniform") return SmoothingMode::Uniform;
  fail(ErrorKind::ConfigError, "unknown smoothing mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    fail(ErrorKind::ConfigError, "loss weights must be >= 0");
  if (beta1 < 0 || beta2 < 0)
    fail(ErrorKind::ConfigError, "smoothing coefficients must be >= 0");
  if (sigma < 0) fail(ErrorKind::ConfigError, "sigma must be >= 0");
  if (lr < 0) fail(ErrorKind::ConfigError, "lr must be >= 0");
  if (plateau_factor <= 0 || plateau_factor > 1)
    fail(ErrorKind::ConfigError, "plateau_factor must be in (0, 1]");
  if (plateau_patience < 1)
    fail(ErrorKind::ConfigError, "plateau_patience must be >= 1");
  if (batch_size < 1) fail(ErrorKind::ConfigError, "batch_size must be >= 1");
  if (max_epochs < 1) fail(ErrorKind::ConfigError, "max_epochs must be >= 1");
}

double total_loss(const LossComponents& c, const TrainConfig& cfg) {
  const double v = c.label + cfg.lambda1 * c.length +
                   cfg.lambda2 * c.r3f_length + cfg.lambda3 * c.r3f_label;
  if (!std::isfinite(c.label) || !std::isfinite(c.length) ||
      !std::isfinite(c.r3f_length) || !std::isfinite(c.r3f_label) ||
      !std::isfinite(v))
    fail(ErrorKind::NonFiniteLoss, "loss components are not finite");
  return v;
}

Var label_loss(Tape& t, Var logits, const std::vector<int>& targets,
               double beta2, SmoothingMode mode) {
  Var lp = t.log_softmax_rows(logits);
  Var nll = t.nll(lp, targets);
  if (beta2 == 0.0) return nll;
  Var smooth = mode == SmoothingMode::Entropy ? t.neg_entropy(lp) : t.ce_uniform(lp);
  return t.add_scaled(nll, smooth, beta2);
}

Var length_loss(Tape& t, Var length_logits, int ell_star, double beta1,
                SmoothingMode mode) {
  const int classes = static_cast<int>(t.val(length_logits).cols());
  if (ell_star < 1 || ell_star > classes)
    fail(ErrorKind::LengthOutOfRange,
         "gold length " + std::to_string(ell_star) + " outside [1, " +
             std::to_string(classes) + "]");
  Var lp = t.log_softmax_rows(length_logits);
  Var nll = t.nll(lp, {ell_star - 1});
  if (beta1 == 0.0) return nll;
  Var smooth = mode == SmoothingMode::Entropy ? t.neg_entropy(lp) : t.ce_uniform(lp);
  return t.add_scaled(nll, smooth, beta1);
}

std::pair<double, double> r3f_terms(Model& m, const std::vector<Example>& batch,
                                    double sigma, uint64_t noise_seed) {
  if (sigma == 0.0) return {0.0, 0.0};  // U(-0,0) is identically zero
  if (batch.empty()) return {0.0, 0.0};

  std::mt19937_64 noise_rng(noise_seed);
  double len_acc = 0, lab_acc = 0;
  for (const auto& ex : batch) {
    const Prepared p = prepare(m, ex);
    const Mat z =
        draw_noise(static_cast<int>(p.src.size()), m.cfg.d_model, sigma, noise_rng);
    Tape t(false);
    EncoderState clean = encode(t, m, p.src);
    EncoderState noised = encode(t, m, p.src, &z);
    if (m.regime == Regime::NAR) {
      Var kl_len = t.kl_sym(t.log_softmax_rows(predict_length_logits(t, m, clean)),
                            t.log_softmax_rows(predict_length_logits(t, m, noised)));
      Var kl_lab =
          t.kl_sym(t.log_softmax_rows(decode_logits(t, m, clean, p.ell)),
                   t.log_softmax_rows(decode_logits(t, m, noised, p.ell)));
      len_acc += t.val(kl_len)(0, 0);
      lab_acc += t.val(kl_lab)(0, 0);
    } else {
      Var kl_lab =
          t.kl_sym(t.log_softmax_rows(ar_decode_logits(t, m, clean, p.tgt)),
                   t.log_softmax_rows(ar_decode_logits(t, m, noised, p.tgt)));
      lab_acc += t.val(kl_lab)(0, 0);
    }
  }
  const double n = static_cast<double>(batch.size());
  return {len_acc / n, lab_acc / n};
}

TrainReport train(Model& m, const Corpus& train_corpus, const Corpus& dev_corpus,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_corpus.empty())
    fail(ErrorKind::ConfigError, "training corpus is empty");

  std::vector<Prepared> data;
  data.reserve(train_corpus.size());
  for (const auto& ex : train_corpus.examples) {
    Prepared p = prepare(m, ex);
    if (m.regime == Regime::NAR && p.ell > m.cfg.max_len_classes)
      fail(ErrorKind::ConfigError,
           "gold length " + std::to_string(p.ell) + " for " + ex.id +
               " exceeds max_len_classes " +
               std::to_string(m.cfg.max_len_classes));
    data.push_back(std::move(p));
  }

  // Independent streams: noise draws must not perturb shuffling, so enabling
  // the consistency terms with sigma=0 is bit-identical to disabling them.
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 noise_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
  std::mt19937_64 drop_rng(cfg.seed ^ 0x165667b19e3779f9ull);

  const bool use_noise = cfg.r3f && cfg.sigma > 0.0;
  TrainReport report;
  const auto t_start = std::chrono::steady_clock::now();

  double lr = cfg.lr;
  double best_em = -1.0;
  int wait = 0;
  int64_t step = 0;

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossComponents epoch_parts;
    double epoch_total = 0;
    size_t seen = 0;

    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const size_t batch_end = std::min(order.size(), at + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(batch_end - at);
      m.params.zero_grad();
      LossComponents batch_parts;

      for (size_t i = at; i < batch_end; ++i) {
        const Prepared& ex = data[order[i]];
        Mat z;
        if (use_noise)
          z = draw_noise(static_cast<int>(ex.src.size()), m.cfg.d_model,
                         cfg.sigma, noise_rng);
        Tape tape(true);
        BuiltLoss built = build_loss(tape, m, ex, cfg, use_noise ? &z : nullptr,
                                     m.cfg.dropout > 0 ? &drop_rng : nullptr);
        tape.backward(built.total);
        batch_parts.label += built.parts.label * inv_b;
        batch_parts.length += built.parts.length * inv_b;
        batch_parts.r3f_length += built.parts.r3f_length * inv_b;
        batch_parts.r3f_label += built.parts.r3f_label * inv_b;
      }
      for (auto& p : m.params.tensors) p.grad *= inv_b;

      const double batch_total = total_loss(batch_parts, cfg);  // NonFiniteLoss
      adam_step(m.params, lr, ++step);

      const double w = static_cast<double>(batch_end - at);
      epoch_parts.label += batch_parts.label * w;
      epoch_parts.length += batch_parts.length * w;
      epoch_parts.r3f_length += batch_parts.r3f_length * w;
      epoch_parts.r3f_label += batch_parts.r3f_label * w;
      epoch_total += batch_total * w;
      seen += batch_end - at;
    }

    const double inv_n = 1.0 / static_cast<double>(seen);
    if (!std::isfinite(epoch_total * inv_n) || epoch_total * inv_n > 1e8)
      fail(ErrorKind::DivergedLoss,
           "epoch " + std::to_string(epoch) + " mean loss " +
               std::to_string(epoch_total * inv_n));

    EvalResult dev = evaluate(m, dev_corpus, 1);

    EpochStats st;
    st.epoch = epoch;
    st.label_loss = epoch_parts.label * inv_n;
    st.length_loss = epoch_parts.length * inv_n;
    st.r3f_length = epoch_parts.r3f_length * inv_n;
    st.r3f_label = epoch_parts.r3f_label * inv_n;
    st.total = epoch_total * inv_n;
    st.dev_em = dev.em;
    st.dev_length_acc = dev.length_acc;
    st.lr = lr;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               t_epoch)
                     .count();
    report.epochs.push_back(st);

    // dev-EM plateau schedule
    if (dev.em > best_em + 1e-12) {
      best_em = dev.em;
      wait = 0;
    } else if (++wait > cfg.plateau_patience) {
      lr = std::max(lr * cfg.plateau_factor, cfg.min_lr);
      wait = 0;
    }

    if (cfg.stop_at_dev_em >= 0 && dev.em >= cfg.stop_at_dev_em) break;
  }

  if (!report.epochs.empty()) {
    report.final_dev_em = report.epochs.back().dev_em;
    report.final_dev_length_acc = report.epochs.back().dev_length_acc;
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return report;
}

double grad_check(Model& m, const TrainConfig& cfg,
                  const std::vector<Example>& batch, double epsilon) {
  if (batch.empty()) fail(ErrorKind::ConfigError, "grad_check needs examples");
  if (epsilon <= 0) fail(ErrorKind::ConfigError, "epsilon must be positive");

  std::vector<Prepared> data;
  for (const auto& ex : batch) data.push_back(prepare(m, ex));

  const bool use_noise = cfg.r3f && cfg.sigma > 0.0;
  std::vector<Mat> noises(data.size());
  std::mt19937_64 noise_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
  if (use_noise)
    for (size_t i = 0; i < data.size(); ++i)
      noises[i] = draw_noise(static_cast<int>(data[i].src.size()),
                             m.cfg.d_model, cfg.sigma, noise_rng);

  const double inv_n = 1.0 / static_cast<double>(data.size());

  auto loss_value = [&]() {
    double sum = 0;
    for (size_t i = 0; i < data.size(); ++i) {
      Tape t(false);
      BuiltLoss b = build_loss(t, m, data[i], cfg,
                               use_noise ? &noises[i] : nullptr, nullptr);
      sum += t.val(b.total)(0, 0);
    }
    return sum * inv_n;
  };

  m.params.zero_grad();
  for (size_t i = 0; i < data.size(); ++i) {
    Tape t(true);
    BuiltLoss b =
        build_loss(t, m, data[i], cfg, use_noise ? &noises[i] : nullptr, nullptr);
    t.backward(b.total);
  }
  std::vector<Mat> analytic;
  analytic.reserve(m.params.tensors.size());
  for (const auto& p : m.params.tensors) analytic.push_back(p.grad * inv_n);

  double worst = 0;
  for (size_t ti = 0; ti < m.params.tensors.size(); ++ti) {
    Mat& value = m.params.tensors[ti].value;
    for (int c = 0; c < value.cols(); ++c)
      for (int r = 0; r < value.rows(); ++r) {
        const double orig = value(r, c);
        value(r, c) = orig + epsilon;
        const double up = loss_value();
        value(r, c) = orig - epsilon;
        const double down = loss_value();
        value(r, c) = orig;
        const double numeric = (up - down) / (2 * epsilon);
        const double exact = analytic[ti](r, c);
        const double denom = std::max(std::abs(numeric) + std::abs(exact), 1e-6);
        worst = std::max(worst, std::abs(numeric - exact) / denom);
      }
  }
  return worst;
}

}  // namespace spanparse
