#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pipefold/tensor.hpp"

namespace pipefold {

// Token id layout: 0 = PAD, 1 = SOS, 2 = EOS, then one language token per
// script (pivot first), then content tokens. Language tokens replace SOS on
// the decoder side to select the output script.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;

  Vocab() = default;
  // language_names come without angle brackets; content tokens are the
  // surface strings (single characters for this task).
  static Vocab build(const std::vector<std::string>& language_names,
                     const std::vector<std::string>& content_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_languages() const { return n_languages_; }

  const std::string& token(int id) const;
  int id(const std::string& token) const;        // throws VocabError when unknown
  bool contains(const std::string& token) const;

  bool is_language(int id) const;
  bool is_content(int id) const;
  int language_id(const std::string& language_name) const;  // "<name>" lookup
  std::string language_name(int id) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

  // Content round-trips. encode_word throws VocabError on unknown characters.
  std::vector<int> encode_word(const std::string& utf8_word) const;
  std::string decode_word(const std::vector<int>& content_ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int n_languages_ = 0;
};

// A word as content token ids plus the language tag it belongs to. Content
// never includes PAD/SOS/EOS or language tokens.
struct TokenSequence {
  std::vector<int> ids;
  int lang = -1;

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const TokenSequence&) const = default;
};

// Throws when the sequence breaks the content/tag contract or exceeds
// l_max - 2 (room for the SOS/EOS frame).
void validate_sequence(const Vocab& vocab, const TokenSequence& seq, int l_max);

struct ModelConfig {
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;  // applies to encoder and decoder stacks alike
  int ff_dim = 128;
  int l_max = 24;
  int vocab_size = 0;
  int n_languages = 0;
  float dropout = 0.1f;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
  Tensor gamma, beta;
};
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1;
  AttentionParams self_attn;
  LayerNormParams ln2;
  AttentionParams cross_attn;
  LayerNormParams ln3;
  FfnParams ffn;
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
using ConstParamVisitor = std::function<void(const std::string&, const Tensor&)>;

struct EncoderParams {
  ModelConfig config;
  Tensor embed;
  std::vector<EncoderLayerParams> layers;
  LayerNormParams ln_final;

  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;
};

struct DecoderParams {
  ModelConfig config;
  Tensor embed;
  std::vector<DecoderLayerParams> layers;
  LayerNormParams ln_final;
  Tensor out_w, out_b;

  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;
};

// Fixed-size encoder output: values is [l_max, d_model]; mask marks the
// valid (non-PAD) rows; rows with mask false are exactly zero.
struct EncodedMatrix {
  Tensor values;
  std::vector<std::uint8_t> mask;
  int valid = 0;
};

// Counts model-level forward passes (one per encode / decode call).
struct InferenceStats {
  std::int64_t encoder_passes = 0;
  std::int64_t decoder_passes = 0;
  std::int64_t total() const { return encoder_passes + decoder_passes; }
};

// Per-call context for training-time forwards. Default-constructed means
// pure inference: no tape, no dropout.
struct ForwardCtx {
  Tape* tape = nullptr;
  std::mt19937_64* dropout_rng = nullptr;  // dropout active only when set
  float dropout = 0.f;
  InferenceStats* stats = nullptr;
};

// Zero-initialized parameter skeletons with the right shapes.
EncoderParams make_encoder_params(const ModelConfig& config);
DecoderParams make_decoder_params(const ModelConfig& config);

// Deterministic initialization: embeddings at scale 1/sqrt(d_model),
// Xavier-uniform projection weights, zero biases, identity layer norm.
std::pair<EncoderParams, DecoderParams> init_model(const ModelConfig& config, std::uint64_t seed);

// Deep copies (fresh storage, trainability flags preserved).
EncoderParams clone(const EncoderParams& p);
DecoderParams clone(const DecoderParams& p);

void set_trainable(EncoderParams& p, bool trainable);
void set_trainable(DecoderParams& p, bool trainable);
void freeze(EncoderParams& p);
void freeze(DecoderParams& p);
bool is_frozen(const EncoderParams& p);
bool is_frozen(const DecoderParams& p);

std::vector<std::pair<std::string, Tensor>> named_params(EncoderParams& p, const std::string& prefix);
std::vector<std::pair<std::string, Tensor>> named_params(DecoderParams& p, const std::string& prefix);

std::int64_t param_count(const EncoderParams& p);
std::int64_t param_count(const DecoderParams& p);

// Sinusoidal positional encodings, [l_max, d_model].
Tensor positional_encoding(int l_max, int d_model);

// Frames x as SOS + content + EOS, runs the encoder stack over the valid
// positions and scatters into the constant [l_max, d_model] output with PAD
// rows zeroed. Throws LengthError when the frame exceeds l_max.
EncodedMatrix encode(const EncoderParams& enc, const TokenSequence& x, const ForwardCtx& ctx = {});

// Greedy autoregressive decode seeded with the language token in place of
// SOS. Stops at EOS or max_len. Ties break toward the lowest token id. The
// generated vocabulary is content tokens plus EOS; PAD/SOS/language tokens
// are never emitted. Throws VocabError when lang is not a language token.
TokenSequence decode_greedy(const DecoderParams& dec, const EncodedMatrix& ctx, int lang,
                            int max_len, InferenceStats* stats = nullptr);

// Teacher-forcing logits: position i conditions on lang + target[0..i-1];
// T = target length + 1 (the trailing position predicts EOS).
Tensor teacher_forcing_logits(const DecoderParams& dec, const EncodedMatrix& ctx,
                              const TokenSequence& target, const ForwardCtx& fwd = {});

// Row-major flatten with masked rows zeroed; length l_max * d_model.
Tensor flatten_masked(const EncodedMatrix& m, Tape* tape = nullptr);

// 1 - cosine similarity of the two encodings flattened over the rows valid
// in both masks. Shapes must agree. Differentiable through either side.
Tensor cosine_distill_loss(const EncodedMatrix& v2, const EncodedMatrix& v2p, Tape* tape = nullptr);

// Plain double-precision cosine over the co-valid rows, for evaluation.
double encoded_cosine(const EncodedMatrix& a, const EncodedMatrix& b);

}  // namespace pipefold
