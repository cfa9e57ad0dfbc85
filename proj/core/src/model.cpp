#include "pipefold/model.hpp"

#include <algorithm>
#include <cmath>

#include "pipefold/errors.hpp"
#include "pipefold/rng.hpp"
#include "pipefold/utf8.hpp"

namespace pipefold {

namespace {
constexpr float kLnEps = 1e-5f;
constexpr float kNegInf = -1e9f;
}  // namespace

// ---- Vocab -----------------------------------------------------------------

Vocab Vocab::build(const std::vector<std::string>& language_names,
                   const std::vector<std::string>& content_tokens) {
  Vocab v;
  v.tokens_ = {"<pad>", "<sos>", "<eos>"};
  for (const auto& name : language_names) v.tokens_.push_back("<" + name + ">");
  v.n_languages_ = static_cast<int>(language_names.size());
  for (const auto& tok : content_tokens) v.tokens_.push_back(tok);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, fresh] = v.index_.emplace(v.tokens_[i], static_cast<int>(i));
    if (!fresh) throw VocabError("Vocab: duplicate token '" + v.tokens_[i] + "'");
  }
  return v;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw VocabError("Vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw VocabError("Vocab: unknown token '" + token + "'");
  return it->second;
}

bool Vocab::contains(const std::string& token) const { return index_.count(token) > 0; }

bool Vocab::is_language(int id) const { return id >= 3 && id < 3 + n_languages_; }

bool Vocab::is_content(int id) const { return id >= 3 + n_languages_ && id < size(); }

int Vocab::language_id(const std::string& language_name) const {
  const int lid = id("<" + language_name + ">");
  if (!is_language(lid)) throw VocabError("Vocab: '" + language_name + "' is not a language");
  return lid;
}

std::string Vocab::language_name(int id) const {
  if (!is_language(id)) throw VocabError("Vocab: id " + std::to_string(id) + " is not a language token");
  const std::string& t = token(id);
  return t.substr(1, t.size() - 2);
}

std::vector<int> Vocab::encode_word(const std::string& utf8_word) const {
  std::vector<int> out;
  for (const auto& ch : utf8_chars(utf8_word)) out.push_back(id(ch));
  return out;
}

std::string Vocab::decode_word(const std::vector<int>& content_ids) const {
  std::string out;
  for (int id : content_ids) out += token(id);
  return out;
}

void validate_sequence(const Vocab& vocab, const TokenSequence& seq, int l_max) {
  if (!vocab.is_language(seq.lang))
    throw VocabError("sequence language tag " + std::to_string(seq.lang) + " is not a language token");
  if (seq.length() > l_max - 2)
    throw LengthError("sequence of length " + std::to_string(seq.length()) +
                      " exceeds l_max - 2 = " + std::to_string(l_max - 2));
  for (int id : seq.ids)
    if (!vocab.is_content(id))
      throw VocabError("sequence contains non-content token id " + std::to_string(id));
}

// ---- config / params -------------------------------------------------------

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ff_dim <= 0 || l_max < 4 ||
      vocab_size <= 3 || n_languages <= 0)
    throw ConfigError("ModelConfig: all sizes must be positive (l_max >= 4, vocab > specials)");
  if (d_model % n_heads != 0)
    throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (dropout < 0.f || dropout >= 1.f) throw ConfigError("ModelConfig: dropout must be in [0, 1)");
  if (3 + n_languages >= vocab_size)
    throw ConfigError("ModelConfig: vocab has no content tokens");
}

namespace {

void visit_ln(const std::string& base, LayerNormParams& ln, const ParamVisitor& fn) {
  fn(base + ".gamma", ln.gamma);
  fn(base + ".beta", ln.beta);
}

void visit_attn(const std::string& base, AttentionParams& a, const ParamVisitor& fn) {
  fn(base + ".wq", a.wq);
  fn(base + ".bq", a.bq);
  fn(base + ".wk", a.wk);
  fn(base + ".bk", a.bk);
  fn(base + ".wv", a.wv);
  fn(base + ".bv", a.bv);
  fn(base + ".wo", a.wo);
  fn(base + ".bo", a.bo);
}

void visit_ffn(const std::string& base, FfnParams& f, const ParamVisitor& fn) {
  fn(base + ".w1", f.w1);
  fn(base + ".b1", f.b1);
  fn(base + ".w2", f.w2);
  fn(base + ".b2", f.b2);
}

}  // namespace

void EncoderParams::visit(const ParamVisitor& fn) {
  fn("embed", embed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = "layers." + std::to_string(i);
    visit_ln(base + ".ln1", layers[i].ln1, fn);
    visit_attn(base + ".attn", layers[i].attn, fn);
    visit_ln(base + ".ln2", layers[i].ln2, fn);
    visit_ffn(base + ".ffn", layers[i].ffn, fn);
  }
  visit_ln("ln_final", ln_final, fn);
}

void EncoderParams::visit(const ConstParamVisitor& fn) const {
  const_cast<EncoderParams*>(this)->visit(
      ParamVisitor([&fn](const std::string& n, Tensor& t) { fn(n, t); }));
}

void DecoderParams::visit(const ParamVisitor& fn) {
  fn("embed", embed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = "layers." + std::to_string(i);
    visit_ln(base + ".ln1", layers[i].ln1, fn);
    visit_attn(base + ".self_attn", layers[i].self_attn, fn);
    visit_ln(base + ".ln2", layers[i].ln2, fn);
    visit_attn(base + ".cross_attn", layers[i].cross_attn, fn);
    visit_ln(base + ".ln3", layers[i].ln3, fn);
    visit_ffn(base + ".ffn", layers[i].ffn, fn);
  }
  visit_ln("ln_final", ln_final, fn);
  fn("out_w", out_w);
  fn("out_b", out_b);
}

void DecoderParams::visit(const ConstParamVisitor& fn) const {
  const_cast<DecoderParams*>(this)->visit(
      ParamVisitor([&fn](const std::string& n, Tensor& t) { fn(n, t); }));
}

namespace {

LayerNormParams make_ln(int d) {
  return {Tensor::zeros({d}), Tensor::zeros({d})};
}

AttentionParams make_attn(int d) {
  return {Tensor::zeros({d, d}), Tensor::zeros({d}), Tensor::zeros({d, d}), Tensor::zeros({d}),
          Tensor::zeros({d, d}), Tensor::zeros({d}), Tensor::zeros({d, d}), Tensor::zeros({d})};
}

FfnParams make_ffn(int d, int ff) {
  return {Tensor::zeros({d, ff}), Tensor::zeros({ff}), Tensor::zeros({ff, d}), Tensor::zeros({d})};
}

}  // namespace

EncoderParams make_encoder_params(const ModelConfig& cfg) {
  EncoderParams p;
  p.config = cfg;
  p.embed = Tensor::zeros({cfg.vocab_size, cfg.d_model});
  for (int i = 0; i < cfg.n_layers; ++i)
    p.layers.push_back({make_ln(cfg.d_model), make_attn(cfg.d_model), make_ln(cfg.d_model),
                        make_ffn(cfg.d_model, cfg.ff_dim)});
  p.ln_final = make_ln(cfg.d_model);
  return p;
}

DecoderParams make_decoder_params(const ModelConfig& cfg) {
  DecoderParams p;
  p.config = cfg;
  p.embed = Tensor::zeros({cfg.vocab_size, cfg.d_model});
  for (int i = 0; i < cfg.n_layers; ++i)
    p.layers.push_back({make_ln(cfg.d_model), make_attn(cfg.d_model), make_ln(cfg.d_model),
                        make_attn(cfg.d_model), make_ln(cfg.d_model),
                        make_ffn(cfg.d_model, cfg.ff_dim)});
  p.ln_final = make_ln(cfg.d_model);
  p.out_w = Tensor::zeros({cfg.d_model, cfg.vocab_size});
  p.out_b = Tensor::zeros({cfg.vocab_size});
  return p;
}

namespace {

// rank-1 tensors are biases (zero) except layer-norm gamma (one); rank-2
// weights get Xavier-uniform; the embedding table gets scale 1/sqrt(d).
void init_tensor(const std::string& name, Tensor& t, int d_model, std::mt19937_64& gen) {
  if (name.ends_with("gamma")) {
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 1.f);
    return;
  }
  if (t.shape().size() == 1) return;  // zero biases / beta
  if (name == "embed") {
    const float scale = 1.f / std::sqrt(static_cast<float>(d_model));
    for (auto& v : t.mutable_data()) v = normal_float(gen) * scale;
    return;
  }
  const float a = std::sqrt(6.f / static_cast<float>(t.dim(0) + t.dim(1)));
  for (auto& v : t.mutable_data()) v = static_cast<float>((uniform_real(gen) * 2.0 - 1.0) * a);
}

}  // namespace

std::pair<EncoderParams, DecoderParams> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams enc = make_encoder_params(config);
  DecoderParams dec = make_decoder_params(config);
  std::mt19937_64 gen(splitmix64(seed));
  enc.visit([&](const std::string& n, Tensor& t) {
    init_tensor(n, t, config.d_model, gen);
    t.set_requires_grad(true);
  });
  dec.visit([&](const std::string& n, Tensor& t) {
    init_tensor(n, t, config.d_model, gen);
    t.set_requires_grad(true);
  });
  return {std::move(enc), std::move(dec)};
}

EncoderParams clone(const EncoderParams& p) {
  EncoderParams c = p;
  c.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  return c;
}

DecoderParams clone(const DecoderParams& p) {
  DecoderParams c = p;
  c.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  return c;
}

void set_trainable(EncoderParams& p, bool trainable) {
  p.visit([trainable](const std::string&, Tensor& t) { t.set_requires_grad(trainable); });
}

void set_trainable(DecoderParams& p, bool trainable) {
  p.visit([trainable](const std::string&, Tensor& t) { t.set_requires_grad(trainable); });
}

void freeze(EncoderParams& p) { set_trainable(p, false); }
void freeze(DecoderParams& p) { set_trainable(p, false); }

bool is_frozen(const EncoderParams& p) {
  bool frozen = true;
  p.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) {
    frozen = frozen && !t.requires_grad();
  }));
  return frozen;
}

bool is_frozen(const DecoderParams& p) {
  bool frozen = true;
  p.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) {
    frozen = frozen && !t.requires_grad();
  }));
  return frozen;
}

std::vector<std::pair<std::string, Tensor>> named_params(EncoderParams& p, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  p.visit([&](const std::string& n, Tensor& t) { out.emplace_back(prefix + n, t); });
  return out;
}

std::vector<std::pair<std::string, Tensor>> named_params(DecoderParams& p, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  p.visit([&](const std::string& n, Tensor& t) { out.emplace_back(prefix + n, t); });
  return out;
}

std::int64_t param_count(const EncoderParams& p) {
  std::int64_t n = 0;
  p.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { n += t.size(); }));
  return n;
}

std::int64_t param_count(const DecoderParams& p) {
  std::int64_t n = 0;
  p.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { n += t.size(); }));
  return n;
}

Tensor positional_encoding(int l_max, int d_model) {
  Tensor pe = Tensor::zeros({l_max, d_model});
  auto data = pe.mutable_data();
  for (int pos = 0; pos < l_max; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      data[static_cast<std::size_t>(pos) * d_model + i] = static_cast<float>(std::sin(angle));
      if (i + 1 < d_model)
        data[static_cast<std::size_t>(pos) * d_model + i + 1] = static_cast<float>(std::cos(angle));
    }
  }
  return pe;
}

// ---- forward passes ---------------------------------------------------------

namespace {

Tensor apply_dropout(const Tensor& t, const ForwardCtx& ctx) {
  if (!ctx.dropout_rng || ctx.dropout <= 0.f) return t;
  const float keep = 1.f - ctx.dropout;
  Tensor mask = Tensor::zeros(t.shape());
  for (auto& v : mask.mutable_data())
    v = uniform_real(*ctx.dropout_rng) < keep ? 1.f / keep : 0.f;
  return mul(t, mask, ctx.tape);
}

Tensor causal_mask(int t) {
  Tensor m = Tensor::zeros({t, t});
  auto data = m.mutable_data();
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) data[static_cast<std::size_t>(i) * t + j] = kNegInf;
  return m;
}

Tensor mha(const AttentionParams& ap, int n_heads, const Tensor& q_in, const Tensor& kv_in,
           bool causal, const ForwardCtx& ctx) {
  Tape* tape = ctx.tape;
  const int d = q_in.dim(1);
  const int dh = d / n_heads;
  Tensor q = add_row(matmul(q_in, ap.wq, tape), ap.bq, tape);
  Tensor k = add_row(matmul(kv_in, ap.wk, tape), ap.bk, tape);
  Tensor v = add_row(matmul(kv_in, ap.wv, tape), ap.bv, tape);

  Tensor cmask;
  if (causal) cmask = causal_mask(q_in.dim(0));

  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  const float inv_sqrt = 1.f / std::sqrt(static_cast<float>(dh));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh, tape);
    Tensor kh = slice_cols(k, h * dh, dh, tape);
    Tensor vh = slice_cols(v, h * dh, dh, tape);
    Tensor scores = affine(matmul_nt(qh, kh, tape), inv_sqrt, 0.f, tape);
    if (causal) scores = add(scores, cmask, tape);
    Tensor probs = softmax_rows(scores, tape);
    heads.push_back(matmul(probs, vh, tape));
  }
  Tensor o = concat_cols(heads, tape);
  return add_row(matmul(o, ap.wo, tape), ap.bo, tape);
}

Tensor ffn_forward(const FfnParams& f, const Tensor& x, Tape* tape) {
  Tensor h = relu(add_row(matmul(x, f.w1, tape), f.b1, tape), tape);
  return add_row(matmul(h, f.w2, tape), f.b2, tape);
}

}  // namespace

EncodedMatrix encode(const EncoderParams& enc, const TokenSequence& x, const ForwardCtx& ctx) {
  const ModelConfig& cfg = enc.config;
  const int n = x.length() + 2;
  if (n > cfg.l_max)
    throw LengthError("encode: framed input of length " + std::to_string(n) + " exceeds l_max " +
                      std::to_string(cfg.l_max));
  if (ctx.stats) ++ctx.stats->encoder_passes;

  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(n));
  ids.push_back(Vocab::kSos);
  ids.insert(ids.end(), x.ids.begin(), x.ids.end());
  ids.push_back(Vocab::kEos);

  Tape* tape = ctx.tape;
  // Only the valid positions are computed; PAD rows are identically zero in
  // the output, so skipping them changes nothing downstream.
  Tensor pos = positional_encoding(cfg.l_max, cfg.d_model);
  Tensor h = add(embedding_rows(enc.embed, ids, tape), slice_rows(pos, 0, n), tape);
  h = apply_dropout(h, ctx);
  for (const auto& layer : enc.layers) {
    Tensor a = layer_norm(h, layer.ln1.gamma, layer.ln1.beta, kLnEps, tape);
    h = add(h, apply_dropout(mha(layer.attn, cfg.n_heads, a, a, false, ctx), ctx), tape);
    Tensor f = layer_norm(h, layer.ln2.gamma, layer.ln2.beta, kLnEps, tape);
    h = add(h, apply_dropout(ffn_forward(layer.ffn, f, tape), ctx), tape);
  }
  h = layer_norm(h, enc.ln_final.gamma, enc.ln_final.beta, kLnEps, tape);

  EncodedMatrix out;
  out.values = pad_rows(h, cfg.l_max, tape);
  out.mask.assign(static_cast<std::size_t>(cfg.l_max), 0);
  std::fill(out.mask.begin(), out.mask.begin() + n, 1);
  out.valid = n;
  return out;
}

namespace {

Tensor decoder_hidden(const DecoderParams& dec, const std::vector<int>& input_ids,
                      const EncodedMatrix& ctx, const ForwardCtx& fwd) {
  const ModelConfig& cfg = dec.config;
  const int t = static_cast<int>(input_ids.size());
  if (t > cfg.l_max)
    throw LengthError("decoder: input of length " + std::to_string(t) + " exceeds l_max " +
                      std::to_string(cfg.l_max));
  if (ctx.valid < 1 || ctx.valid > ctx.values.dim(0))
    throw ValueError("decoder: encoded context has no valid rows");
  if (ctx.values.dim(1) != cfg.d_model)
    throw ShapeError("decoder: context width " + shape_str(ctx.values.shape()) +
                     " does not match d_model " + std::to_string(cfg.d_model));

  Tape* tape = fwd.tape;
  Tensor pos = positional_encoding(cfg.l_max, cfg.d_model);
  Tensor h = add(embedding_rows(dec.embed, input_ids, tape), slice_rows(pos, 0, t), tape);
  h = apply_dropout(h, fwd);
  // Cross attention only sees the valid context rows; masked rows cannot
  // soak up attention mass.
  Tensor ctx_rows = slice_rows(ctx.values, 0, ctx.valid, tape);
  for (const auto& layer : dec.layers) {
    Tensor a = layer_norm(h, layer.ln1.gamma, layer.ln1.beta, kLnEps, tape);
    h = add(h, apply_dropout(mha(layer.self_attn, cfg.n_heads, a, a, true, fwd), fwd), tape);
    Tensor c = layer_norm(h, layer.ln2.gamma, layer.ln2.beta, kLnEps, tape);
    h = add(h, apply_dropout(mha(layer.cross_attn, cfg.n_heads, c, ctx_rows, false, fwd), fwd), tape);
    Tensor f = layer_norm(h, layer.ln3.gamma, layer.ln3.beta, kLnEps, tape);
    h = add(h, apply_dropout(ffn_forward(layer.ffn, f, tape), fwd), tape);
  }
  return layer_norm(h, dec.ln_final.gamma, dec.ln_final.beta, kLnEps, tape);
}

void require_language(const ModelConfig& cfg, int lang) {
  if (lang < 3 || lang >= 3 + cfg.n_languages)
    throw VocabError("decoder: id " + std::to_string(lang) + " is not a registered language token");
}

}  // namespace

TokenSequence decode_greedy(const DecoderParams& dec, const EncodedMatrix& ctx, int lang,
                            int max_len, InferenceStats* stats) {
  const ModelConfig& cfg = dec.config;
  require_language(cfg, lang);
  if (max_len < 0) throw ValueError("decode_greedy: negative max_len");
  if (stats) ++stats->decoder_passes;

  std::vector<int> ids{lang};
  TokenSequence out;
  out.lang = lang;
  while (static_cast<int>(out.ids.size()) < max_len &&
         static_cast<int>(ids.size()) < cfg.l_max) {
    Tensor h = decoder_hidden(dec, ids, ctx, {});
    Tensor last = slice_rows(h, static_cast<int>(ids.size()) - 1, 1);
    Tensor logits = add_row(matmul(last, dec.out_w), dec.out_b);
    auto row = logits.data();
    // The generation vocabulary is content plus EOS: PAD, SOS and language
    // tokens are structural and never emitted.
    int best = Vocab::kEos;
    float best_v = row[Vocab::kEos];
    for (int j = 3 + cfg.n_languages; j < cfg.vocab_size; ++j) {
      if (row[j] > best_v) {
        best_v = row[j];
        best = j;
      }
    }
    if (best == Vocab::kEos) break;
    out.ids.push_back(best);
    ids.push_back(best);
  }
  return out;
}

Tensor teacher_forcing_logits(const DecoderParams& dec, const EncodedMatrix& ctx,
                              const TokenSequence& target, const ForwardCtx& fwd) {
  const ModelConfig& cfg = dec.config;
  require_language(cfg, target.lang);
  if (target.length() + 1 > cfg.l_max)
    throw LengthError("teacher_forcing_logits: target length " + std::to_string(target.length()) +
                      " + 1 exceeds l_max " + std::to_string(cfg.l_max));
  std::vector<int> ids{target.lang};
  ids.insert(ids.end(), target.ids.begin(), target.ids.end());
  Tensor h = decoder_hidden(dec, ids, ctx, fwd);
  return add_row(matmul(h, dec.out_w, fwd.tape), dec.out_b, fwd.tape);
}

Tensor flatten_masked(const EncodedMatrix& m, Tape* tape) {
  const int rows = m.values.dim(0), cols = m.values.dim(1);
  if (static_cast<int>(m.mask.size()) != rows)
    throw ShapeError("flatten_masked: mask length " + std::to_string(m.mask.size()) +
                     " does not match " + shape_str(m.values.shape()));
  const bool all_valid = std::all_of(m.mask.begin(), m.mask.end(), [](std::uint8_t b) { return b; });
  Tensor v = m.values;
  if (!all_valid) {
    Tensor mask = Tensor::zeros({rows, cols});
    auto md = mask.mutable_data();
    for (int i = 0; i < rows; ++i)
      if (m.mask[static_cast<std::size_t>(i)])
        std::fill(md.begin() + static_cast<std::size_t>(i) * cols,
                  md.begin() + static_cast<std::size_t>(i + 1) * cols, 1.f);
    v = mul(v, mask, tape);
  }
  return reshape(v, {rows * cols}, tape);
}

Tensor cosine_distill_loss(const EncodedMatrix& v2, const EncodedMatrix& v2p, Tape* tape) {
  if (v2.values.shape() != v2p.values.shape())
    throw ShapeError("cosine_distill_loss: shapes differ: " + shape_str(v2.values.shape()) +
                     " vs " + shape_str(v2p.values.shape()));
  if (v2.mask.size() != v2p.mask.size())
    throw ShapeError("cosine_distill_loss: mask lengths differ");
  // Teacher and student inputs generally differ in length, so the encodings
  // are compared over the rows valid in both.
  EncodedMatrix a = v2, b = v2p;
  a.mask.resize(v2.mask.size());
  for (std::size_t i = 0; i < v2.mask.size(); ++i)
    a.mask[i] = static_cast<std::uint8_t>(v2.mask[i] && v2p.mask[i]);
  b.mask = a.mask;
  Tensor fa = flatten_masked(a, tape);
  Tensor fb = flatten_masked(b, tape);
  Tensor cos = cosine_similarity(fa, fb, tape);
  return affine(cos, -1.f, 1.f, tape);
}

double encoded_cosine(const EncodedMatrix& a, const EncodedMatrix& b) {
  if (a.values.shape() != b.values.shape() || a.mask.size() != b.mask.size())
    throw ShapeError("encoded_cosine: shape or mask mismatch");
  const int rows = a.values.dim(0), cols = a.values.dim(1);
  const auto* pa = a.values.data().data();
  const auto* pb = b.values.data().data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < rows; ++i) {
    if (!a.mask[static_cast<std::size_t>(i)] || !b.mask[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < cols; ++j) {
      const double x = pa[static_cast<std::size_t>(i) * cols + j];
      const double y = pb[static_cast<std::size_t>(i) * cols + j];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
  }
  if (na < 1e-24 || nb < 1e-24)
    throw DegenerateVectorError("encoded_cosine: degenerate encoding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace pipefold
