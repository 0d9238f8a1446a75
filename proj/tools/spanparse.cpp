// Command-line front end. Every subcommand is a thin wrapper over library
// calls; anything interesting enough to test lives behind the library API.
//
// Exit codes: 0 success, 1 validation/data errors, 2 usage errors.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spanparse/bench.hpp"
#include "spanparse/data.hpp"
#include "spanparse/inference.hpp"
#include "spanparse/training.hpp"

namespace {

using namespace spanparse;
using nlohmann::json;

Form form_flag(const std::string& s) { return form_from_string(s); }

// --config FILE: flat key=value defaults, applied before parsing so that
// explicit flags always win. CLI11's own subcommand-level config support
// never fires (configs are only processed on the top-level app), so the
// merge happens in expand_config_args below; this option just declares the
// flag and documents it.
std::string g_config_path;

void add_config_option(CLI::App* sub) {
  sub->add_option("--config", g_config_path,
                  "flat key=value defaults; flags override");
}

std::vector<std::pair<std::string, std::string>> read_config_pairs(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::ConfigError,
           path + ":" + std::to_string(lineno) + ": expected key=value");
    pairs.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return pairs;
}

// Rewrites [sub, flags...] so config-file pairs appear as --key=value right
// after the subcommand, skipping keys the command line already sets.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0].empty() || args[0][0] == '-') return args;

  std::string config_path;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::vector<std::string> out{args[0]};
  for (const auto& [key, value] : read_config_pairs(config_path)) {
    const std::string flag = "--" + key;
    bool given = false;
    for (size_t i = 1; i < args.size(); ++i)
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) {
        given = true;
        break;
      }
    if (!given) out.push_back(flag + "=" + value);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void add_form_option(CLI::App* sub, std::string& target, const char* name,
                     const char* help) {
  sub->add_option(name, target, help)
      ->check(CLI::IsMember({"canonical", "index", "span"}));
}

void add_model_options(CLI::App* sub, ModelConfig& mc) {
  sub->add_option("--d-model", mc.d_model, "embedding width");
  sub->add_option("--n-heads", mc.n_heads, "attention heads");
  sub->add_option("--enc-layers", mc.n_enc_layers, "encoder layers");
  sub->add_option("--dec-layers", mc.n_dec_layers, "decoder layers");
  sub->add_option("--d-ff", mc.d_ff, "feed-forward width");
  sub->add_option("--max-len-classes", mc.max_len_classes,
                  "largest predictable target length");
  sub->add_option("--max-src-len", mc.max_src_len, "source length cap");
  sub->add_option("--dropout", mc.dropout, "dropout rate");
}

void add_train_options(CLI::App* sub, TrainConfig& tc,
                       std::string& smoothing) {
  sub->add_option("--lr", tc.lr, "Adam learning rate");
  sub->add_option("--batch-size", tc.batch_size, "examples per step");
  sub->add_option("--epochs", tc.max_epochs, "epoch cap");
  sub->add_option("--lambda1", tc.lambda1, "length loss weight");
  sub->add_option("--lambda2", tc.lambda2, "length consistency weight");
  sub->add_option("--lambda3", tc.lambda3, "decoder consistency weight");
  sub->add_option("--beta1", tc.beta1, "length smoothing weight");
  sub->add_option("--beta2", tc.beta2, "label smoothing weight");
  sub->add_option("--sigma", tc.sigma, "embedding noise half-width");
  sub->add_flag("--r3f", tc.r3f, "enable the consistency terms");
  sub->add_option("--smoothing", smoothing, "entropy|uniform")
      ->check(CLI::IsMember({"entropy", "uniform"}));
  sub->add_option("--plateau-factor", tc.plateau_factor,
                  "lr decay factor on dev plateau");
  sub->add_option("--plateau-patience", tc.plateau_patience,
                  "epochs without dev gain before decay");
  sub->add_option("--min-lr", tc.min_lr, "learning rate floor");
  sub->add_option("--stop-at-dev-em", tc.stop_at_dev_em,
                  "stop once dev EM reaches this percent (-1 disables)");
}

void write_train_report(const TrainReport& report, const std::string& epochs_path,
                        const std::string& summary_path) {
  {
    std::ofstream out(epochs_path);
    if (!out) fail(ErrorKind::IoError, "cannot write " + epochs_path);
    for (const auto& e : report.epochs) {
      json j;
      j["epoch"] = e.epoch;
      j["label_loss"] = e.label_loss;
      j["length_loss"] = e.length_loss;
      j["r3f_length"] = e.r3f_length;
      j["r3f_label"] = e.r3f_label;
      j["total"] = e.total;
      j["dev_em"] = e.dev_em;
      j["dev_length_acc"] = e.dev_length_acc;
      j["lr"] = e.lr;
      j["seconds"] = e.seconds;
      out << j.dump() << '\n';
    }
  }
  std::ofstream out(summary_path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + summary_path);
  json j;
  j["epochs"] = report.epochs.size();
  j["final_dev_em"] = report.final_dev_em;
  j["final_dev_length_acc"] = report.final_dev_length_acc;
  j["seconds"] = report.seconds;
  out << j.dump() << '\n';
}

void print_stats_row(std::ostream& out, const char* name, const LengthStats& s) {
  out << std::left << std::setw(10) << name << std::right << std::setw(16)
      << s.num_length_classes << std::setw(26) << s.mean_lengths_per_skeleton
      << std::setw(14) << s.mean_length << std::setw(12) << s.max_length
      << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"span-pointer semantic parser: data, training, inference, "
               "benchmarks"};
  app.require_subcommand(1);

  // gen-data -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_config_option(gen);
  SyntheticGrammarConfig gcfg;
  int gen_n = 1000;
  std::string gen_out, gen_grammar, gen_form = "canonical";
  gen->add_option("--out", gen_out, "output TSV")->required();
  gen->add_option("--n", gen_n, "number of examples");
  gen->add_option("--seed", gcfg.seed, "generator seed");
  gen->add_option("--grammar", gen_grammar, "grammar key=value file");
  gen->add_option("--num-intents", gcfg.num_intents, "intent count");
  gen->add_option("--num-slots", gcfg.num_slots, "slot count");
  gen->add_option("--max-depth", gcfg.max_depth, "nesting depth (1 = flat)");
  gen->add_option("--max-slots-per-intent", gcfg.max_slots_per_intent,
                  "children per intent cap");
  gen->add_option("--span-min", gcfg.span_min, "shortest leaf span");
  gen->add_option("--span-max", gcfg.span_max, "longest leaf span");
  gen->add_option("--vocab-size", gcfg.vocab_size, "filler word count");
  add_form_option(gen, gen_form, "--form", "frame encoding for the output");
  gen->callback([&] {
    SyntheticGrammarConfig cfg = gcfg;
    if (!gen_grammar.empty()) {
      const uint64_t seed = gcfg.seed;
      cfg = grammar_from_file(gen_grammar);
      if (gen->count("--seed")) cfg.seed = seed;  // flag wins over file
    }
    const Corpus corpus = generate_synthetic(cfg, gen_n);
    write_tsv(corpus, gen_out, form_flag(gen_form));
    std::cout << "wrote " << corpus.size() << " examples to " << gen_out
              << "\n";
  });

  // transform ------------------------------------------------------------
  auto* tr = app.add_subcommand("transform", "rewrite frames in another form");
  add_config_option(tr);
  std::string tr_in, tr_out, tr_form = "span", tr_in_form = "canonical";
  tr->add_option("--in", tr_in, "input TSV")->required();
  tr->add_option("--out", tr_out, "output TSV")->required();
  add_form_option(tr, tr_form, "--form", "output frame encoding");
  add_form_option(tr, tr_in_form, "--in-form", "input frame encoding");
  tr->callback([&] {
    const Corpus corpus = load_tsv(tr_in, form_flag(tr_in_form));
    write_tsv(corpus, tr_out, form_flag(tr_form));
    std::cout << "wrote " << corpus.size() << " examples to " << tr_out
              << "\n";
  });

  // spis -----------------------------------------------------------------
  auto* sp = app.add_subcommand("spis", "label-coverage subsample");
  add_config_option(sp);
  std::string sp_in, sp_out, sp_in_form = "canonical";
  int sp_k = 10;
  uint64_t sp_seed = 0;
  sp->add_option("--in", sp_in, "input TSV")->required();
  sp->add_option("--out", sp_out, "output TSV")->required();
  sp->add_option("--k", sp_k, "per-label quota");
  sp->add_option("--seed", sp_seed, "shuffle seed");
  add_form_option(sp, sp_in_form, "--in-form", "input frame encoding");
  sp->callback([&] {
    const Form f = form_flag(sp_in_form);
    const Corpus corpus = load_tsv(sp_in, f);
    const Corpus sample = spis_sample(corpus, sp_k, sp_seed);
    write_tsv(sample, sp_out, f);
    std::cout << "kept " << sample.size() << " of " << corpus.size()
              << " examples\n";
  });

  // train ------------------------------------------------------------------
  auto* tn = app.add_subcommand("train", "train a parser");
  add_config_option(tn);
  ModelConfig tn_mc;
  TrainConfig tn_tc;
  std::string tn_train, tn_dev, tn_out, tn_regime = "nar", tn_form = "span",
              tn_in_form = "canonical", tn_smoothing = "entropy";
  uint64_t tn_seed = 1;
  tn->add_option("--train", tn_train, "training TSV")->required();
  tn->add_option("--dev", tn_dev, "dev TSV (defaults to the training set)");
  tn->add_option("--out", tn_out, "checkpoint path")->required();
  tn->add_option("--regime", tn_regime, "nar|ar")
      ->check(CLI::IsMember({"nar", "ar"}));
  add_form_option(tn, tn_form, "--form",
                  "target frame encoding the model predicts");
  add_form_option(tn, tn_in_form, "--in-form", "frame encoding in the files");
  tn->add_option("--seed", tn_seed, "seeds init, shuffling, noise, dropout");
  add_model_options(tn, tn_mc);
  add_train_options(tn, tn_tc, tn_smoothing);
  tn->callback([&] {
    tn_mc.seed = tn_seed;
    tn_tc.seed = tn_seed;
    tn_tc.smoothing = tn_smoothing == "uniform" ? SmoothingMode::Uniform
                                                : SmoothingMode::Entropy;
    const Form in_form = form_flag(tn_in_form);
    const Corpus train_corpus = load_tsv(tn_train, in_form);
    const Corpus dev_corpus = tn_dev.empty() ? train_corpus
                                             : load_tsv(tn_dev, in_form);
    Model m = make_model(tn_mc, tn_regime == "ar" ? Regime::AR : Regime::NAR,
                         form_flag(tn_form), build_vocab(train_corpus));
    std::cout << "model: " << count_params(m) << " parameters\n";
    const TrainReport report = train(m, train_corpus, dev_corpus, tn_tc);
    save_model(m, tn_out);
    write_train_report(report, tn_out + ".epochs.jsonl",
                       tn_out + ".summary.json");
    std::cout << "final dev EM " << report.final_dev_em << "%, length acc "
              << report.final_dev_length_acc << "% after "
              << report.epochs.size() << " epochs (" << report.seconds
              << " s)\n";
  });

  // predict ----------------------------------------------------------------
  auto* pr = app.add_subcommand("predict", "decode a corpus to JSONL");
  add_config_option(pr);
  std::string pr_model, pr_in, pr_out, pr_in_form = "canonical";
  int pr_k = 1;
  pr->add_option("--model", pr_model, "checkpoint")->required();
  pr->add_option("--in", pr_in, "input TSV")->required();
  pr->add_option("--out", pr_out, "output JSONL")->required();
  pr->add_option("--k", pr_k, "length candidates (NAR) or beam width (AR)");
  add_form_option(pr, pr_in_form, "--in-form", "input frame encoding");
  pr->callback([&] {
    Model m = load_model(pr_model);
    const Corpus corpus = load_tsv(pr_in, form_flag(pr_in_form));
    const auto preds = predict_corpus(m, corpus, pr_k);
    write_predictions(preds, m, pr_out);
    std::cout << "wrote " << preds.size() << " predictions to " << pr_out
              << "\n";
  });

  // eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "score a model or a prediction file");
  add_config_option(ev);
  std::string ev_model, ev_in, ev_pred, ev_gold, ev_in_form = "canonical";
  int ev_k = 1, ev_threads = 1;
  auto* ev_model_opt = ev->add_option("--model", ev_model, "checkpoint");
  ev->add_option("--in", ev_in, "eval TSV");
  auto* ev_pred_opt =
      ev->add_option("--pred", ev_pred, "prediction JSONL for offline scoring");
  ev->add_option("--gold", ev_gold, "gold TSV for offline scoring");
  ev->add_option("--k", ev_k, "length candidates (NAR) or beam width (AR)");
  ev->add_option("--threads", ev_threads, "math thread cap");
  add_form_option(ev, ev_in_form, "--in-form", "gold frame encoding");
  ev_model_opt->excludes(ev_pred_opt);
  ev->callback([&] {
    apply_thread_cap(ev_threads);
    const Form in_form = form_flag(ev_in_form);
    EvalResult r;
    if (!ev_pred.empty()) {
      if (ev_gold.empty())
        fail(ErrorKind::ConfigError, "--pred needs --gold");
      r = evaluate_prediction_file(ev_pred, load_tsv(ev_gold, in_form));
    } else if (!ev_model.empty()) {
      if (ev_in.empty()) fail(ErrorKind::ConfigError, "--model needs --in");
      Model m = load_model(ev_model);
      r = evaluate(m, load_tsv(ev_in, in_form), ev_k);
    } else {
      fail(ErrorKind::ConfigError, "need either --model or --pred");
    }
    json j;
    j["em"] = r.em;
    j["length_acc"] = r.length_acc;
    j["malformed_rate"] = r.malformed_rate;
    j["n"] = r.n;
    std::cout << j.dump() << "\n";
  });

  // stats ----------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "length statistics per frame form");
  add_config_option(st);
  std::string st_in, st_in_form = "canonical";
  st->add_option("--in", st_in, "input TSV")->required();
  add_form_option(st, st_in_form, "--in-form", "input frame encoding");
  st->callback([&] {
    const Corpus corpus = load_tsv(st_in, form_flag(st_in_form));
    std::cout << corpus.size() << " examples (" << corpus.num_skipped
              << " skipped)\n";
    std::cout << std::left << std::setw(10) << "form" << std::right
              << std::setw(16) << "length classes" << std::setw(26)
              << "mean lengths/skeleton" << std::setw(14) << "mean length"
              << std::setw(12) << "max length" << "\n";
    print_stats_row(std::cout, "canonical",
                    compute_length_stats(corpus, Form::Canonical));
    print_stats_row(std::cout, "index",
                    compute_length_stats(corpus, Form::Index));
    print_stats_row(std::cout, "span",
                    compute_length_stats(corpus, Form::Span));
  });

  // gradcheck --------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of the objective");
  add_config_option(gc);
  ModelConfig gc_mc;
  TrainConfig gc_tc;
  std::string gc_regime = "nar", gc_form = "span", gc_smoothing = "entropy";
  uint64_t gc_seed = 1;
  int gc_n = 2;
  double gc_eps = 1e-4, gc_tol = 1e-3;
  SyntheticGrammarConfig gc_gcfg;
  gc_mc.d_model = 16;
  gc_mc.n_heads = 2;
  gc_mc.d_ff = 24;
  gc_mc.max_len_classes = 24;
  gc->add_option("--regime", gc_regime, "nar|ar")
      ->check(CLI::IsMember({"nar", "ar"}));
  add_form_option(gc, gc_form, "--form", "target frame encoding");
  gc->add_option("--seed", gc_seed, "seeds model and data");
  gc->add_option("--n", gc_n, "batch size");
  gc->add_option("--epsilon", gc_eps, "finite-difference step");
  gc->add_option("--tol", gc_tol, "max relative error allowed");
  add_model_options(gc, gc_mc);
  add_train_options(gc, gc_tc, gc_smoothing);
  gc->callback([&] {
    gc_mc.seed = gc_seed;
    gc_tc.seed = gc_seed;
    gc_mc.dropout = 0;
    gc_tc.smoothing = gc_smoothing == "uniform" ? SmoothingMode::Uniform
                                                : SmoothingMode::Entropy;
    gc_gcfg.seed = gc_seed;
    const Corpus corpus = generate_synthetic(gc_gcfg, gc_n);
    Model m = make_model(gc_mc, gc_regime == "ar" ? Regime::AR : Regime::NAR,
                         form_flag(gc_form), build_vocab(corpus));
    std::cout << "model: " << count_params(m) << " parameters\n";
    const double err = grad_check(m, gc_tc, corpus.examples, gc_eps);
    std::cout << "max relative error " << err << " (tolerance " << gc_tol
              << ")\n";
    if (!(err < gc_tol))
      fail(ErrorKind::NonFiniteLoss,
           "gradient check failed: " + std::to_string(err));
  });

  // bench --------------------------------------------------------------
  auto* bn = app.add_subcommand("bench", "latency and memory benchmark");
  add_config_option(bn);
  ModelConfig bn_mc;
  std::string bn_in, bn_out, bn_regime = "both", bn_form = "span",
              bn_in_form = "canonical";
  int bn_beam = 5, bn_threads = 1, bn_warmup = 8;
  uint64_t bn_seed = 1;
  bn->add_option("--in", bn_in, "benchmark TSV")->required();
  bn->add_option("--regime", bn_regime, "nar|ar|both")
      ->check(CLI::IsMember({"nar", "ar", "both"}));
  add_form_option(bn, bn_form, "--form",
                  "target frame encoding the models predict");
  add_form_option(bn, bn_in_form, "--in-form", "input frame encoding");
  bn->add_option("--beam", bn_beam, "length candidates (NAR) / beam (AR)");
  bn->add_option("--threads", bn_threads, "math thread cap");
  bn->add_option("--warmup", bn_warmup, "untimed leading examples");
  bn->add_option("--seed", bn_seed, "model init seed");
  bn->add_option("--out", bn_out, "machine-readable JSONL report");
  add_model_options(bn, bn_mc);
  bn->callback([&] {
    apply_thread_cap(bn_threads);
    bn_mc.seed = bn_seed;
    const Form form = form_flag(bn_form);
    const Corpus corpus = load_tsv(bn_in, form_flag(bn_in_form));
    const Vocabulary vocab = build_vocab(corpus);
    BenchReport report;
    report.hardware = hardware_summary();
    report.threads = bn_threads;
    if (bn_regime != "ar") {
      Model m = make_model(bn_mc, Regime::NAR, form, vocab);
      report.rows.push_back(bench_model(m, corpus, bn_beam, bn_warmup));
    }
    if (bn_regime != "nar") {
      Model m = make_model(bn_mc, Regime::AR, form, vocab);
      report.rows.push_back(bench_model(m, corpus, bn_beam, bn_warmup));
    }
    print_table(std::cout, report);
    if (!bn_out.empty()) write_report_jsonl(report, bn_out);
  });

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());  // parse() wants reversed args
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help on stdout, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const spanparse::Error& e) {
    std::cerr << "error: " << e.what() << "\n";  // what() already names the kind
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
