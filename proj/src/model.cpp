#include "spanparse/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace spanparse {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "spanparse-ckpt\n";
constexpr uint32_t kVersion = 1;

void add_attn(ParamSet& p, const std::string& pfx, int d) {
  p.add(pfx + ".wq", d, d);
  p.add(pfx + ".bq", 1, d);
  p.add(pfx + ".wk", d, d);
  p.add(pfx + ".bk", 1, d);
  p.add(pfx + ".wv", d, d);
  p.add(pfx + ".bv", 1, d);
  p.add(pfx + ".wo", d, d);
  p.add(pfx + ".bo", 1, d);
}

void add_ln(ParamSet& p, const std::string& pfx, int d) {
  p.add(pfx + ".g", 1, d);
  p.add(pfx + ".b", 1, d);
}

void add_ff(ParamSet& p, const std::string& pfx, int d, int dff) {
  p.add(pfx + ".w1", d, dff);
  p.add(pfx + ".b1", 1, dff);
  p.add(pfx + ".w2", dff, d);
  p.add(pfx + ".b2", 1, d);
}

// AR input-embedding rows: [0, G) generated tokens, then max_src_len rows
// for copy tokens, then one BOS row. EOS is never an input.
int ar_embed_rows(const Model& m) {
  return m.gen_width() + m.cfg.max_src_len + 1;
}

int ar_bos_row(const Model& m) { return ar_embed_rows(m) - 1; }

int ar_embed_row_of(const Model& m, int out_id) {
  const int G = m.gen_width();
  if (out_id < G) return out_id;
  if (out_id == m.eos_id())
    fail(ErrorKind::ConfigError, "EOS cannot be a decoder input");
  const int v = out_id - G - 1;
  if (v >= m.cfg.max_src_len)
    fail(ErrorKind::ConfigError, "copy index beyond max_src_len");
  return G + v;
}

void build_params(Model& m) {
  const int d = m.cfg.d_model;
  ParamSet& p = m.params;

  p.add("src_embed", static_cast<int>(m.vocab.source_words.size()), d);
  for (int l = 0; l < m.cfg.n_enc_layers; ++l) {
    const std::string pfx = "enc" + std::to_string(l);
    add_ln(p, pfx + ".ln1", d);
    add_attn(p, pfx + ".attn", d);
    add_ln(p, pfx + ".ln2", d);
    add_ff(p, pfx + ".ff", d, m.cfg.d_ff);
  }
  add_ln(p, "enc.lnf", d);

  p.add("len.w1", d, d);
  p.add("len.b1", 1, d);
  p.add("len.w2", d, m.cfg.max_len_classes);
  p.add("len.b2", 1, m.cfg.max_len_classes);

  if (m.regime == Regime::NAR) {
    p.add("mask_embed", 1, d);
    p.add("dec_pos", m.cfg.max_len_classes, d);
  } else {
    p.add("tgt_embed", ar_embed_rows(m), d);
    p.add("dec_pos", 2 * m.cfg.max_len_classes + 1, d);
  }

  for (int l = 0; l < m.cfg.n_dec_layers; ++l) {
    const std::string pfx = "dec" + std::to_string(l);
    add_ln(p, pfx + ".ln1", d);
    add_attn(p, pfx + ".self", d);
    add_ln(p, pfx + ".ln2", d);
    add_attn(p, pfx + ".cross", d);
    add_ln(p, pfx + ".ln3", d);
    add_ff(p, pfx + ".ff", d, m.cfg.d_ff);
  }
  add_ln(p, "dec.lnf", d);

  const int head = m.gen_width() + (m.regime == Regime::AR ? 1 : 0);
  p.add("head.wgen", d, head);
  p.add("head.bgen", 1, head);
  if (m.uses_copy()) p.add("head.wcpy", d, d);
}

void init_params(Model& m) {
  std::mt19937_64 rng(m.cfg.seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  for (auto& t : m.params.tensors) {
    const auto dot = t.name.find_last_of('.');
    const std::string leaf =
        dot == std::string::npos ? t.name : t.name.substr(dot + 1);
    if (leaf == "g") {  // layer-norm gain
      t.value.setOnes();
      continue;
    }
    if (!leaf.empty() && leaf[0] == 'b') continue;  // biases stay zero
    for (int c = 0; c < t.value.cols(); ++c)
      for (int r = 0; r < t.value.rows(); ++r) t.value(r, c) = dist(rng);
  }
}

Mat sinusoid_table(int rows, int d) {
  Mat pos(rows, d);
  for (int p = 0; p < rows; ++p)
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -double(i / 2 * 2) / d);
      pos(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  return pos;
}

Var attn_block(Tape& t, Model& m, const std::string& pfx, Var q_in, Var kv_in,
               const Mat* mask, std::mt19937_64* drop_rng) {
  ParamSet& P = m.params;
  Var q = t.linear(q_in, P.at(pfx + ".wq"), &P.at(pfx + ".bq"));
  Var k = t.linear(kv_in, P.at(pfx + ".wk"), &P.at(pfx + ".bk"));
  Var v = t.linear(kv_in, P.at(pfx + ".wv"), &P.at(pfx + ".bv"));

  const int H = m.cfg.n_heads, dh = m.cfg.d_model / H;
  std::vector<Var> heads;
  heads.reserve(H);
  for (int h = 0; h < H; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    Var s = t.scale(t.matmul(qh, kh, false, true), 1.0 / std::sqrt(double(dh)));
    if (mask) s = t.add_const(s, *mask);
    heads.push_back(t.matmul(t.softmax_rows(s), vh));
  }
  Var c = H == 1 ? heads[0] : t.concat_cols(heads);
  Var o = t.linear(c, P.at(pfx + ".wo"), &P.at(pfx + ".bo"));
  if (drop_rng && m.cfg.dropout > 0) o = t.dropout(o, m.cfg.dropout, *drop_rng);
  return o;
}

Var ff_block(Tape& t, Model& m, const std::string& pfx, Var x,
             std::mt19937_64* drop_rng) {
  ParamSet& P = m.params;
  Var h = t.gelu(t.linear(x, P.at(pfx + ".w1"), &P.at(pfx + ".b1")));
  Var o = t.linear(h, P.at(pfx + ".w2"), &P.at(pfx + ".b2"));
  if (drop_rng && m.cfg.dropout > 0) o = t.dropout(o, m.cfg.dropout, *drop_rng);
  return o;
}

// Pre-norm decoder stack shared by both regimes.
Var decoder_stack(Tape& t, Model& m, Var x, const EncoderState& enc,
                  const Mat* self_mask, std::mt19937_64* drop_rng) {
  ParamSet& P = m.params;
  for (int l = 0; l < m.cfg.n_dec_layers; ++l) {
    const std::string pfx = "dec" + std::to_string(l);
    Var a = t.layer_norm(x, P.at(pfx + ".ln1.g"), P.at(pfx + ".ln1.b"));
    x = t.add(x, attn_block(t, m, pfx + ".self", a, a, self_mask, drop_rng));
    a = t.layer_norm(x, P.at(pfx + ".ln2.g"), P.at(pfx + ".ln2.b"));
    x = t.add(x, attn_block(t, m, pfx + ".cross", a, enc.hidden, nullptr, drop_rng));
    a = t.layer_norm(x, P.at(pfx + ".ln3.g"), P.at(pfx + ".ln3.b"));
    x = t.add(x, ff_block(t, m, pfx + ".ff", a, drop_rng));
  }
  return t.layer_norm(x, P.at("dec.lnf.g"), P.at("dec.lnf.b"));
}

Var output_head(Tape& t, Model& m, Var dec, const EncoderState& enc) {
  Var gen = t.linear(dec, m.params.at("head.wgen"), &m.params.at("head.bgen"));
  if (!m.uses_copy()) return gen;
  return t.concat_cols({gen, copy_scores(t, m, dec, enc.hidden)});
}

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers},
              {"d_ff", c.d_ff},
              {"max_len_classes", c.max_len_classes},
              {"max_src_len", c.max_src_len},
              {"dropout", c.dropout},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.n_enc_layers = j.at("n_enc_layers");
  c.n_dec_layers = j.at("n_dec_layers");
  c.d_ff = j.at("d_ff");
  c.max_len_classes = j.at("max_len_classes");
  c.max_src_len = j.at("max_src_len");
  c.dropout = j.at("dropout");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

const char* to_string(Regime r) { return r == Regime::NAR ? "nar" : "ar"; }

Regime regime_from_string(const std::string& s) {
  if (s == "nar") return Regime::NAR;
  if (s == "ar") return Regime::AR;
  fail(ErrorKind::ConfigError, "unknown regime '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_ff < 1)
    fail(ErrorKind::ConfigError, "model dimensions must be positive");
  if (d_model % n_heads != 0)
    fail(ErrorKind::ConfigError, "d_model must be divisible by n_heads");
  if (n_enc_layers < 0 || n_dec_layers < 0)
    fail(ErrorKind::ConfigError, "layer counts must be non-negative");
  if (max_len_classes < 1)
    fail(ErrorKind::ConfigError, "max_len_classes must be >= 1");
  if (max_src_len < 1) fail(ErrorKind::ConfigError, "max_src_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    fail(ErrorKind::ConfigError, "dropout must be in [0, 1)");
}

int Model::gen_width() const {
  const int onto = onto_width();
  return form == Form::Canonical
             ? onto + static_cast<int>(vocab.source_words.size())
             : onto;
}

int Model::output_width(int n) const {
  int w = gen_width();
  if (regime == Regime::AR) w += 1;  // EOS
  if (uses_copy()) w += n;
  return w;
}

int Model::target_token_id(const std::string& tok, int n) const {
  const int gid = vocab.gen_id(tok);
  if (gid >= 0) return gid;
  if (tok[0] == '[' || tok == "]")
    fail(ErrorKind::TargetOutOfVocab, "ontology token '" + tok + "' is unknown");
  if (uses_copy()) {
    // integer literal = copy position
    bool digits = !tok.empty();
    for (char c : tok) digits = digits && c >= '0' && c <= '9';
    if (!digits)
      fail(ErrorKind::TargetOutOfVocab, "token '" + tok + "' is not generable");
    const int v = std::stoi(tok);
    if (v < 0 || v >= n)
      fail(ErrorKind::TargetOutOfVocab,
           "copy index " + tok + " outside source of length " + std::to_string(n));
    return gen_width() + (regime == Regime::AR ? 1 : 0) + v;
  }
  return onto_width() + vocab.word_id(tok);  // unk when unseen
}

std::string Model::token_of_id(int id) const {
  const int onto = onto_width();
  if (id < onto) return vocab.ontology_tokens[id];
  if (form == Form::Canonical) {
    const int w = id - onto;
    if (w < static_cast<int>(vocab.source_words.size()))
      return vocab.source_words[w];
    fail(ErrorKind::ConfigError, "output id out of range");
  }
  int base = gen_width() + (regime == Regime::AR ? 1 : 0);
  if (regime == Regime::AR && id == eos_id())
    fail(ErrorKind::ConfigError, "EOS has no surface token");
  return std::to_string(id - base);
}

Model make_model(const ModelConfig& cfg, Regime regime, Form form,
                 const Vocabulary& vocab) {
  cfg.validate();
  if (vocab.ontology_tokens.empty())
    fail(ErrorKind::ConfigError, "vocabulary has no ontology tokens");
  Model m;
  m.cfg = cfg;
  m.regime = regime;
  m.form = form;
  m.vocab = vocab;
  m.vocab.rebuild_lookup();
  build_params(m);
  init_params(m);
  m.src_pos = sinusoid_table(cfg.max_src_len, cfg.d_model);
  return m;
}

int64_t count_params(const Model& m) { return m.params.count(); }

std::vector<int> source_ids(const Model& m, const Utterance& u) {
  std::vector<int> ids;
  ids.reserve(u.tokens.size());
  for (const auto& tok : u.tokens) ids.push_back(m.vocab.word_id(tok));
  return ids;
}

std::vector<int> target_ids(const Model& m, const Frame& gold,
                            const Utterance& u) {
  Frame f = to_canonical_form(gold, u);
  if (m.form == Form::Index) f = to_index_form(f, u);
  else if (m.form == Form::Span) f = to_span_form(f, u);
  std::vector<int> ids;
  for (const auto& tok : linearize(f))
    ids.push_back(m.target_token_id(tok, u.size()));
  return ids;
}

EncoderState encode(Tape& t, Model& m, const std::vector<int>& src_ids,
                    const Mat* noise, std::mt19937_64* dropout_rng) {
  const int n = static_cast<int>(src_ids.size());
  if (n == 0) fail(ErrorKind::EmptyUtterance, "cannot encode zero tokens");
  if (n > m.cfg.max_src_len)
    fail(ErrorKind::SourceTooLong,
         std::to_string(n) + " tokens exceeds max_src_len " +
             std::to_string(m.cfg.max_src_len));

  ParamSet& P = m.params;
  Var x = t.lookup_rows(P.at("src_embed"), src_ids);
  x = t.scale(x, std::sqrt(double(m.cfg.d_model)));
  if (noise) {
    if (noise->rows() != n || noise->cols() != m.cfg.d_model)
      fail(ErrorKind::ConfigError, "noise shape mismatch");
    x = t.add_const(x, m.src_pos.topRows(n) + *noise);
  } else {
    x = t.add_const(x, m.src_pos.topRows(n));
  }
  if (dropout_rng && m.cfg.dropout > 0)
    x = t.dropout(x, m.cfg.dropout, *dropout_rng);

  for (int l = 0; l < m.cfg.n_enc_layers; ++l) {
    const std::string pfx = "enc" + std::to_string(l);
    Var a = t.layer_norm(x, P.at(pfx + ".ln1.g"), P.at(pfx + ".ln1.b"));
    x = t.add(x, attn_block(t, m, pfx + ".attn", a, a, nullptr, dropout_rng));
    a = t.layer_norm(x, P.at(pfx + ".ln2.g"), P.at(pfx + ".ln2.b"));
    x = t.add(x, ff_block(t, m, pfx + ".ff", a, dropout_rng));
  }

  EncoderState enc;
  enc.hidden = t.layer_norm(x, P.at("enc.lnf.g"), P.at("enc.lnf.b"));
  enc.pooled = t.mean_rows(enc.hidden);
  enc.n = n;
  return enc;
}

Var predict_length_logits(Tape& t, Model& m, const EncoderState& enc) {
  ParamSet& P = m.params;
  Var h = t.gelu(t.linear(enc.pooled, P.at("len.w1"), &P.at("len.b1")));
  return t.linear(h, P.at("len.w2"), &P.at("len.b2"));
}

Var copy_scores(Tape& t, Model& m, Var dec, Var enc_hidden) {
  return t.matmul(t.linear(dec, m.params.at("head.wcpy"), nullptr), enc_hidden,
                  false, true);
}

Var decode_logits(Tape& t, Model& m, const EncoderState& enc, int ell,
                  std::mt19937_64* dropout_rng) {
  if (m.regime != Regime::NAR)
    fail(ErrorKind::ConfigError, "decode_logits is NAR-only");
  if (ell < 1 || ell > m.cfg.max_len_classes)
    fail(ErrorKind::LengthOutOfRange,
         "length " + std::to_string(ell) + " outside [1, " +
             std::to_string(m.cfg.max_len_classes) + "]");

  std::vector<int> pos(ell);
  for (int i = 0; i < ell; ++i) pos[i] = i;
  Var x = t.lookup_rows(m.params.at("dec_pos"), pos);
  x = t.add_rowvec(x, m.params.at("mask_embed"));
  if (dropout_rng && m.cfg.dropout > 0)
    x = t.dropout(x, m.cfg.dropout, *dropout_rng);

  Var d = decoder_stack(t, m, x, enc, nullptr, dropout_rng);
  return output_head(t, m, d, enc);
}

Var ar_decode_logits(Tape& t, Model& m, const EncoderState& enc,
                     const std::vector<int>& prefix,
                     std::mt19937_64* dropout_rng) {
  if (m.regime != Regime::AR)
    fail(ErrorKind::ConfigError, "ar_decode_logits is AR-only");
  const int T = static_cast<int>(prefix.size()) + 1;
  if (T > 2 * m.cfg.max_len_classes + 1)
    fail(ErrorKind::MaxStepsExceeded, "prefix beyond the 2*L_max decode cap");

  std::vector<int> rows(T);
  rows[0] = ar_bos_row(m);
  for (int i = 0; i < T - 1; ++i) rows[i + 1] = ar_embed_row_of(m, prefix[i]);
  std::vector<int> pos(T);
  for (int i = 0; i < T; ++i) pos[i] = i;

  Var x = t.lookup_rows(m.params.at("tgt_embed"), rows);
  x = t.scale(x, std::sqrt(double(m.cfg.d_model)));
  x = t.add(x, t.lookup_rows(m.params.at("dec_pos"), pos));
  if (dropout_rng && m.cfg.dropout > 0)
    x = t.dropout(x, m.cfg.dropout, *dropout_rng);

  Mat causal = Mat::Zero(T, T);
  for (int r = 0; r < T; ++r)
    for (int c = r + 1; c < T; ++c) causal(r, c) = -1e30;

  Var d = decoder_stack(t, m, x, enc, &causal, dropout_rng);
  return output_head(t, m, d, enc);
}

void save_model(const Model& m, const std::string& path) {
  json header;
  header["format"] = "spanparse-model";
  header["version"] = kVersion;
  header["regime"] = to_string(m.regime);
  header["form"] = to_string(m.form);
  header["config"] = config_to_json(m.cfg);
  header["vocab"] = {{"ontology", m.vocab.ontology_tokens},
                     {"max_index", m.vocab.max_index},
                     {"source_words", m.vocab.source_words}};
  json manifest = json::array();
  for (const auto& t : m.params.tensors)
    manifest.push_back({{"name", t.name},
                        {"rows", t.value.rows()},
                        {"cols", t.value.cols()}});
  header["tensors"] = manifest;

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  const std::string hs = header.dump();
  const uint64_t hlen = hs.size();
  out.write(kMagic, std::string(kMagic).size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  // raw column-major doubles, one block per tensor in manifest order
  for (const auto& t : m.params.tensors)
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  if (!out) fail(ErrorKind::IoError, "write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path);

  std::string magic(std::string(kMagic).size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic)
    fail(ErrorKind::ConfigError, path + " is not a model checkpoint");

  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen > (1ull << 30))
    fail(ErrorKind::ConfigError, "corrupt checkpoint header");
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) fail(ErrorKind::ConfigError, "truncated checkpoint header");

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception&) {
    fail(ErrorKind::ConfigError, "unparseable checkpoint header");
  }
  if (header.value("version", 0u) != kVersion)
    fail(ErrorKind::ConfigError,
         "unsupported checkpoint version " +
             std::to_string(header.value("version", 0u)));

  Vocabulary vocab;
  vocab.ontology_tokens =
      header.at("vocab").at("ontology").get<std::vector<std::string>>();
  vocab.max_index = header.at("vocab").at("max_index");
  vocab.source_words =
      header.at("vocab").at("source_words").get<std::vector<std::string>>();
  vocab.rebuild_lookup();

  Model m = make_model(config_from_json(header.at("config")),
                       regime_from_string(header.at("regime")),
                       form_from_string(header.at("form")), vocab);

  const auto& manifest = header.at("tensors");
  if (manifest.size() != m.params.tensors.size())
    fail(ErrorKind::ConfigError, "checkpoint tensor count mismatch");
  for (size_t i = 0; i < m.params.tensors.size(); ++i) {
    Tensor& t = m.params.tensors[i];
    const auto& entry = manifest[i];
    if (entry.at("name") != t.name ||
        entry.at("rows").get<int64_t>() != t.value.rows() ||
        entry.at("cols").get<int64_t>() != t.value.cols())
      fail(ErrorKind::ConfigError,
           "checkpoint shape mismatch at tensor " + t.name);
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!in) fail(ErrorKind::ConfigError, "truncated tensor data at " + t.name);
  }
  return m;
}

}  // namespace spanparse
