#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pipefold/errors.hpp"
#include "pipefold/model.hpp"
#include "pipefold/utf8.hpp"
#include "support/oracles.hpp"

using namespace pipefold;

namespace {

Vocab small_vocab() {
  return Vocab::build({"pivot", "s0", "s1"}, {"a", "b", "c", "d", "e", "f"});
}

ModelConfig small_config(const Vocab& v) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ff_dim = 32;
  cfg.l_max = 10;
  cfg.vocab_size = v.size();
  cfg.n_languages = v.n_languages();
  cfg.dropout = 0.f;
  return cfg;
}

TokenSequence seq(const Vocab& v, const std::string& word, const std::string& lang) {
  TokenSequence s;
  s.ids = v.encode_word(word);
  s.lang = v.language_id(lang);
  return s;
}

}  // namespace

TEST_CASE("vocab layout and round trips") {
  Vocab v = small_vocab();
  CHECK(v.id("<pad>") == Vocab::kPad);
  CHECK(v.id("<sos>") == Vocab::kSos);
  CHECK(v.id("<eos>") == Vocab::kEos);
  CHECK(v.n_languages() == 3);
  CHECK(v.is_language(v.id("<pivot>")));
  CHECK(v.is_content(v.id("a")));

  for (int id = 0; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
  CHECK(v.decode_word(v.encode_word("fade")) == "fade");
  CHECK_THROWS_AS(v.id("<nope>"), VocabError);
  CHECK_THROWS_AS(v.encode_word("z"), VocabError);
  CHECK_THROWS_AS(Vocab::build({"x"}, {"a", "a"}), VocabError);
}

TEST_CASE("sequence validation") {
  Vocab v = small_vocab();
  TokenSequence ok = seq(v, "abc", "s0");
  CHECK_NOTHROW(validate_sequence(v, ok, 10));

  TokenSequence bad_lang = ok;
  bad_lang.lang = Vocab::kSos;
  CHECK_THROWS_AS(validate_sequence(v, bad_lang, 10), VocabError);

  TokenSequence with_special = ok;
  with_special.ids.push_back(Vocab::kEos);
  CHECK_THROWS_AS(validate_sequence(v, with_special, 10), VocabError);

  TokenSequence long_seq = ok;
  long_seq.ids.assign(9, v.id("a"));
  CHECK_THROWS_AS(validate_sequence(v, long_seq, 10), LengthError);
}

TEST_CASE("model config validation") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  CHECK_NOTHROW(cfg.validate());
  ModelConfig odd = cfg;
  odd.n_heads = 3;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  ModelConfig neg = cfg;
  neg.ff_dim = 0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("init determinism and seed sensitivity") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [e1, d1] = init_model(cfg, 7);
  auto [e2, d2] = init_model(cfg, 7);
  auto [e3, d3] = init_model(cfg, 8);

  bool identical = true;
  bool differs_from_other_seed = false;
  std::vector<const Tensor*> t1, t2, t3;
  e1.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { t1.push_back(&t); }));
  e2.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { t2.push_back(&t); }));
  e3.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { t3.push_back(&t); }));
  for (std::size_t i = 0; i < t1.size(); ++i) {
    identical = identical && std::equal(t1[i]->data().begin(), t1[i]->data().end(),
                                        t2[i]->data().begin());
    differs_from_other_seed =
        differs_from_other_seed || !std::equal(t1[i]->data().begin(), t1[i]->data().end(),
                                               t3[i]->data().begin());
  }
  CHECK(identical);
  CHECK(differs_from_other_seed);
}

TEST_CASE("parameter count matches the closed form") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 3);

  const std::int64_t d = cfg.d_model, ff = cfg.ff_dim, vs = cfg.vocab_size, n = cfg.n_layers;
  const std::int64_t attn = 4 * (d * d + d);
  const std::int64_t ffn = d * ff + ff + ff * d + d;
  const std::int64_t ln = 2 * d;
  const std::int64_t enc_expected = vs * d + n * (ln + attn + ln + ffn) + ln;
  const std::int64_t dec_expected = vs * d + n * (ln + attn + ln + attn + ln + ffn) + ln + d * vs + vs;
  CHECK(param_count(enc) == enc_expected);
  CHECK(param_count(dec) == dec_expected);
}

TEST_CASE("encode contract") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 11);

  // constant output shape for any valid input length
  for (const std::string& w : {std::string("a"), std::string("abcd"), std::string("facade")}) {
    EncodedMatrix m = encode(enc, seq(v, w, "s0"));
    CHECK(m.values.shape() == std::vector<int>{cfg.l_max, cfg.d_model});
    CHECK(m.valid == static_cast<int>(utf8_chars(w).size()) + 2);
    // masked rows exactly zero
    for (int i = m.valid; i < cfg.l_max; ++i)
      for (int j = 0; j < cfg.d_model; ++j)
        CHECK(m.values.data()[static_cast<std::size_t>(i) * cfg.d_model + j] == 0.f);
  }

  // positional sensitivity: swapping two tokens changes the encoding
  EncodedMatrix ab = encode(enc, seq(v, "ab", "s0"));
  EncodedMatrix ba = encode(enc, seq(v, "ba", "s0"));
  bool differs = false;
  for (std::int64_t i = 0; i < ab.values.size(); ++i)
    differs = differs || ab.values.data()[static_cast<std::size_t>(i)] !=
                             ba.values.data()[static_cast<std::size_t>(i)];
  CHECK(differs);

  // determinism
  EncodedMatrix again = encode(enc, seq(v, "ab", "s0"));
  CHECK(std::equal(ab.values.data().begin(), ab.values.data().end(), again.values.data().begin()));

  // over-length input
  TokenSequence long_seq;
  long_seq.lang = v.language_id("s0");
  long_seq.ids.assign(static_cast<std::size_t>(cfg.l_max), v.id("a"));
  CHECK_THROWS_AS(encode(enc, long_seq), LengthError);
}

TEST_CASE("decode_greedy contract") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 13);
  EncodedMatrix ctx = encode(enc, seq(v, "abc", "s0"));

  // output projection pinned to EOS stops immediately
  DecoderParams eos_dec = clone(dec);
  std::fill(eos_dec.out_w.mutable_data().begin(), eos_dec.out_w.mutable_data().end(), 0.f);
  std::fill(eos_dec.out_b.mutable_data().begin(), eos_dec.out_b.mutable_data().end(), 0.f);
  eos_dec.out_b.mutable_data()[Vocab::kEos] = 100.f;
  TokenSequence empty = decode_greedy(eos_dec, ctx, v.id("<s1>"), 8);
  CHECK(empty.ids.empty());

  // generated tokens are always content, never structural
  for (std::uint64_t s : {1, 2, 3, 4, 5}) {
    auto [e2, d2] = init_model(cfg, s);
    TokenSequence out = decode_greedy(d2, ctx, v.id("<s1>"), 8);
    for (int id : out.ids) CHECK(v.is_content(id));
    CHECK(out.ids.size() <= 8);
  }

  // language routing: same inputs and language give identical outputs
  TokenSequence a = decode_greedy(dec, ctx, v.id("<s1>"), 8);
  TokenSequence b = decode_greedy(dec, ctx, v.id("<s1>"), 8);
  CHECK(a == b);

  CHECK_THROWS_AS(decode_greedy(dec, ctx, v.id("a"), 8), VocabError);
  CHECK_THROWS_AS(decode_greedy(dec, ctx, Vocab::kPad, 8), VocabError);

  // pass counting
  InferenceStats stats;
  (void)decode_greedy(dec, ctx, v.id("<s1>"), 8, &stats);
  CHECK(stats.decoder_passes == 1);
}

TEST_CASE("argmax ties break toward the lowest token id") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 13);
  EncodedMatrix ctx = encode(enc, seq(v, "ab", "s0"));
  // All logits identical: every content token ties with EOS; lowest id is EOS.
  DecoderParams flat = clone(dec);
  std::fill(flat.out_w.mutable_data().begin(), flat.out_w.mutable_data().end(), 0.f);
  std::fill(flat.out_b.mutable_data().begin(), flat.out_b.mutable_data().end(), 0.f);
  TokenSequence out = decode_greedy(flat, ctx, v.id("<s1>"), 8);
  CHECK(out.ids.empty());

  // Two content tokens tied above everything else: the lower id wins.
  DecoderParams biased = clone(flat);
  biased.out_b.mutable_data()[static_cast<std::size_t>(v.id("b"))] = 5.f;
  biased.out_b.mutable_data()[static_cast<std::size_t>(v.id("c"))] = 5.f;
  TokenSequence out2 = decode_greedy(biased, ctx, v.id("<s1>"), 1);
  REQUIRE(out2.ids.size() == 1);
  CHECK(out2.ids[0] == v.id("b"));
}

TEST_CASE("teacher forcing logits") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 17);
  EncodedMatrix ctx = encode(enc, seq(v, "abc", "s0"));
  TokenSequence target = seq(v, "dbe", "s1");

  Tensor logits = teacher_forcing_logits(dec, ctx, target);
  CHECK(logits.shape() == std::vector<int>{target.length() + 1, cfg.vocab_size});

  // causality: changing target[j] leaves logits at positions <= j unchanged
  TokenSequence perturbed = target;
  perturbed.ids[1] = v.id("f");
  Tensor logits2 = teacher_forcing_logits(dec, ctx, perturbed);
  for (int pos = 0; pos <= 1; ++pos)
    for (int j = 0; j < cfg.vocab_size; ++j)
      CHECK(logits.data()[static_cast<std::size_t>(pos) * cfg.vocab_size + j] ==
            logits2.data()[static_cast<std::size_t>(pos) * cfg.vocab_size + j]);
  bool later_changed = false;
  for (int pos = 2; pos < logits.dim(0); ++pos)
    for (int j = 0; j < cfg.vocab_size; ++j)
      later_changed = later_changed ||
                      logits.data()[static_cast<std::size_t>(pos) * cfg.vocab_size + j] !=
                          logits2.data()[static_cast<std::size_t>(pos) * cfg.vocab_size + j];
  CHECK(later_changed);

  TokenSequence too_long;
  too_long.lang = v.language_id("s1");
  too_long.ids.assign(static_cast<std::size_t>(cfg.l_max), v.id("a"));
  CHECK_THROWS_AS(teacher_forcing_logits(dec, ctx, too_long), LengthError);
}

TEST_CASE("flatten_masked") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 19);
  EncodedMatrix m = encode(enc, seq(v, "abcd", "s0"));

  Tensor flat = flatten_masked(m);
  CHECK(flat.shape() == std::vector<int>{cfg.l_max * cfg.d_model});

  // index-arithmetic oracle: flattening equals row concatenation
  for (int i = 0; i < cfg.l_max; ++i)
    for (int j = 0; j < cfg.d_model; ++j)
      CHECK(flat.data()[static_cast<std::size_t>(i) * cfg.d_model + j] ==
            m.values.data()[static_cast<std::size_t>(i) * cfg.d_model + j]);

  // an all-masked matrix flattens to the zero vector
  EncodedMatrix masked = m;
  std::fill(masked.mask.begin(), masked.mask.end(), 0);
  Tensor zeros = flatten_masked(masked);
  for (float x : zeros.data()) CHECK(x == 0.f);
}

TEST_CASE("cosine distill loss") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  auto [enc, dec] = init_model(cfg, 23);
  EncodedMatrix m = encode(enc, seq(v, "abc", "s0"));

  CHECK(cosine_distill_loss(m, m).item() == doctest::Approx(0.f).epsilon(1e-6));

  EncodedMatrix anti = m;
  anti.values = affine(m.values, -1.f, 0.f);
  CHECK(cosine_distill_loss(m, anti).item() == doctest::Approx(2.f).epsilon(1e-6));

  // orthogonal flattenings: disjoint row support inside the co-valid region
  EncodedMatrix a = m, b = m;
  Tensor va = Tensor::zeros(m.values.shape());
  Tensor vb = Tensor::zeros(m.values.shape());
  va.mutable_data()[0] = 1.f;
  vb.mutable_data()[cfg.d_model + 1] = 1.f;
  a.values = va;
  b.values = vb;
  CHECK(cosine_distill_loss(a, b).item() == doctest::Approx(1.f).epsilon(1e-6));

  // differing masks compare over the intersection: matching prefixes give 0
  EncodedMatrix longer = encode(enc, seq(v, "abcde", "s0"));
  EncodedMatrix shorter = m;
  EncodedMatrix prefix = longer;
  // overwrite the co-valid rows of `prefix` with those of `shorter`
  Tensor vals = longer.values.clone();
  for (int i = 0; i < shorter.valid; ++i)
    for (int j = 0; j < cfg.d_model; ++j)
      vals.mutable_data()[static_cast<std::size_t>(i) * cfg.d_model + j] =
          shorter.values.data()[static_cast<std::size_t>(i) * cfg.d_model + j];
  prefix.values = vals;
  CHECK(cosine_distill_loss(prefix, shorter).item() == doctest::Approx(0.f).epsilon(1e-6));

  // gradient flows through the student side
  std::mt19937_64 gen(5);
  Tensor student_vals = pipefold::test::random_tensor(m.values.shape(), gen);
  auto fn = [&](Tape* tape) {
    EncodedMatrix s = m;
    s.values = student_vals;
    return cosine_distill_loss(m, s, tape);
  };
  auto r = pipefold::test::grad_check(fn, {student_vals});
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("dropout is training-only and seeded") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  cfg.dropout = 0.4f;
  auto [enc, dec] = init_model(cfg, 29);
  TokenSequence x = seq(v, "abcd", "s0");

  // inference path ignores the dropout rate entirely
  EncodedMatrix a = encode(enc, x);
  EncodedMatrix b = encode(enc, x);
  CHECK(std::equal(a.values.data().begin(), a.values.data().end(), b.values.data().begin()));

  // training path: same rng state, same mask; different draws differ
  Tape t1, t2, t3;
  std::mt19937_64 g1(9), g2(9), g3(10);
  EncodedMatrix d1 = encode(enc, x, {&t1, &g1, cfg.dropout, nullptr});
  EncodedMatrix d2 = encode(enc, x, {&t2, &g2, cfg.dropout, nullptr});
  EncodedMatrix d3 = encode(enc, x, {&t3, &g3, cfg.dropout, nullptr});
  CHECK(std::equal(d1.values.data().begin(), d1.values.data().end(), d2.values.data().begin()));
  bool differs = false;
  for (std::int64_t i = 0; i < d1.values.size(); ++i)
    differs = differs || d1.values.data()[static_cast<std::size_t>(i)] !=
                             d3.values.data()[static_cast<std::size_t>(i)];
  CHECK(differs);
}

TEST_CASE("model gradients match finite differences end to end") {
  Vocab v = small_vocab();
  ModelConfig cfg = small_config(v);
  cfg.d_model = 8;
  cfg.ff_dim = 12;
  auto [enc, dec] = init_model(cfg, 31);
  TokenSequence x = seq(v, "ab", "s0");
  TokenSequence y = seq(v, "cd", "s1");

  // spot-check a few parameters through the full encoder+decoder loss
  auto loss_fn = [&](Tape* tape) {
    ForwardCtx fwd{tape, nullptr, 0.f, nullptr};
    EncodedMatrix ctx = encode(enc, x, fwd);
    Tensor logits = teacher_forcing_logits(dec, ctx, y, fwd);
    std::vector<int> targets = y.ids;
    targets.push_back(Vocab::kEos);
    return cross_entropy(logits, targets, Vocab::kPad, tape);
  };
  auto check_param = [&](Tensor param) {
    auto r = pipefold::test::grad_check(loss_fn, {param});
    INFO(r.worst);
    CHECK(r.max_rel_err < 2e-3);
  };
  check_param(enc.layers[0].attn.wq);
  check_param(dec.layers[0].cross_attn.wv);
  check_param(dec.out_b);
}
