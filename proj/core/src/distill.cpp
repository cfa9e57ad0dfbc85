#include "pipefold/distill.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pipefold/errors.hpp"
#include "pipefold/optim.hpp"
#include "pipefold/rng.hpp"

namespace pipefold {

// ---- pipeline ----------------------------------------------------------------

void PipelineSpec::validate() const {
  if (stages.size() != 2)
    throw PipelineError("pipeline must have exactly two stages, got " +
                        std::to_string(stages.size()));
  for (const auto& s : stages)
    if (!s.encoder || !s.decoder || s.out_lang < 0)
      throw PipelineError("pipeline stage is missing encoder, decoder or output language");
}

TokenSequence run_pipeline(const PipelineSpec& pipeline, const TokenSequence& x_s, int tgt_lang,
                           PipelineTrace* trace, InferenceStats* stats) {
  pipeline.validate();
  const PipelineStage& first = pipeline.stages[0];
  const PipelineStage& second = pipeline.stages[1];

  InferenceStats local;
  ForwardCtx fwd;
  fwd.stats = &local;

  EncodedMatrix v1 = encode(*first.encoder, x_s, fwd);
  TokenSequence x_t = decode_greedy(*first.decoder, v1, first.out_lang,
                                    first.decoder->config.l_max - 2, &local);
  if (x_t.ids.empty())
    throw PipelineError("pipeline produced an empty intermediate output");
  EncodedMatrix v2 = encode(*second.encoder, x_t, fwd);
  if (trace) {
    trace->v1 = v1;
    trace->x_t = x_t;
    trace->v2 = v2;
    trace->passes_before_v2 = local.total();
  }
  TokenSequence y = decode_greedy(*second.decoder, v2, tgt_lang,
                                  second.decoder->config.l_max - 2, &local);
  if (stats) {
    stats->encoder_passes += local.encoder_passes;
    stats->decoder_passes += local.decoder_passes;
  }
  return y;
}

TokenSequence StudentModel::predict(const TokenSequence& x_s, int tgt_lang,
                                    InferenceStats* stats) const {
  ForwardCtx fwd;
  fwd.stats = stats;
  EncodedMatrix ctx = encode(encoder, x_s, fwd);
  return decode_greedy(decoder, ctx, tgt_lang, decoder.config.l_max - 2, stats);
}

StudentModel assemble_student(EncoderParams encoder, DecoderParams decoder) {
  if (!(encoder.config == decoder.config))
    throw AssemblyError("assemble_student: encoder and decoder configs differ");
  return StudentModel{std::move(encoder), std::move(decoder)};
}

PipelineSpec mirror_pipeline(const EncoderParams& enc, const DecoderParams& dec, int pivot_lang,
                             int default_tgt_lang) {
  PipelineSpec p;
  p.stages.push_back({&enc, &dec, pivot_lang});
  p.stages.push_back({&enc, &dec, default_tgt_lang});
  return p;
}

// ---- training infrastructure --------------------------------------------------

void TrainHyper::validate(std::size_t dataset_size) const {
  if (epochs <= 0 || batch_size <= 0 || lr <= 0.f || patience <= 0)
    throw ConfigError("TrainHyper: epochs, batch size, learning rate and patience must be positive");
  if (static_cast<std::size_t>(batch_size) > dataset_size)
    throw ConfigError("TrainHyper: batch size " + std::to_string(batch_size) +
                      " exceeds dataset size " + std::to_string(dataset_size));
}

namespace {

struct ExamplePair {
  TokenSequence src;
  TokenSequence tgt;
};

std::vector<ExamplePair> make_examples(const Vocab& vocab, const std::vector<PairRecord>& records,
                                       int l_max) {
  std::vector<ExamplePair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    ExamplePair ex{to_sequence(vocab, r.src_word, r.src_lang),
                   to_sequence(vocab, r.tgt_word, r.tgt_lang)};
    validate_sequence(vocab, ex.src, l_max);
    validate_sequence(vocab, ex.tgt, l_max);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<int> targets_with_eos(const TokenSequence& t) {
  std::vector<int> out = t.ids;
  out.push_back(Vocab::kEos);
  return out;
}

struct TrainerHooks {
  // Returns the mean batch loss built on the tape; an undefined tensor means
  // the whole batch was skipped.
  std::function<Tensor(Tape&, const std::vector<std::size_t>&, std::mt19937_64&)> batch_loss;
  std::function<double()> metric;
  std::function<void()> snapshot;
  std::function<void()> restore;
  std::vector<std::pair<std::string, Tensor>> params;
};

TrainLog run_epochs(std::size_t n_examples, const TrainHyper& hyper, TrainerHooks hooks) {
  hyper.validate(n_examples);
  TrainLog log;
  Adam adam(AdamConfig{.lr = hyper.lr});
  int stale = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<std::size_t> order(n_examples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto order_gen = seeded_stream(hyper.seed, 5000 + static_cast<std::uint64_t>(epoch));
    shuffle_inplace(order, order_gen);
    auto aux_gen = seeded_stream(hyper.seed, 6000 + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < n_examples; start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(n_examples, start + static_cast<std::size_t>(hyper.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      Tape tape;
      Tensor loss = hooks.batch_loss(tape, batch, aux_gen);
      if (!loss.defined()) continue;
      const double value = loss.item();
      if (!std::isfinite(value))
        throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      loss_sum += value;
      ++batches;
      tape.backward(loss);
      adam.step(hooks.params);
    }
    log.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);

    const double metric = hooks.metric();
    log.epoch_metric.push_back(metric);
    if (log.best_epoch < 0 || metric > log.best_metric) {
      log.best_metric = metric;
      log.best_epoch = epoch;
      hooks.snapshot();
      stale = 0;
    } else {
      ++stale;
    }
    if (metric >= hyper.target || stale >= hyper.patience) break;
  }
  hooks.restore();
  return log;
}

std::vector<std::pair<std::string, Tensor>> trainable_only(
    std::vector<std::pair<std::string, Tensor>> params) {
  std::erase_if(params, [](const auto& kv) { return !kv.second.requires_grad(); });
  return params;
}

}  // namespace

std::vector<DistillItem> pair_items(const Vocab& vocab, const std::vector<PairRecord>& to_pivot) {
  std::vector<DistillItem> out;
  out.reserve(to_pivot.size());
  for (const auto& r : to_pivot) {
    if (r.direction != Direction::ToPivot)
      throw InputError("pair_items: expected to-pivot records (the first stage's dataset)");
    out.push_back({to_sequence(vocab, r.src_word, r.src_lang),
                   to_sequence(vocab, r.tgt_word, r.tgt_lang)});
  }
  return out;
}

std::vector<DistillItem> input_items(const Vocab& vocab, const std::vector<PairRecord>& to_pivot) {
  std::vector<DistillItem> out;
  out.reserve(to_pivot.size());
  for (const auto& r : to_pivot)
    out.push_back({to_sequence(vocab, r.src_word, r.src_lang), std::nullopt});
  return out;
}

// ---- teacher -------------------------------------------------------------------

double exact_match_rate(const EncoderParams& enc, const DecoderParams& dec, const Vocab& vocab,
                        const std::vector<PairRecord>& pairs) {
  if (pairs.empty()) throw InputError("exact_match_rate: empty pair list");
  std::int64_t hits = 0;
  for (const auto& r : pairs) {
    const TokenSequence src = to_sequence(vocab, r.src_word, r.src_lang);
    const TokenSequence tgt = to_sequence(vocab, r.tgt_word, r.tgt_lang);
    EncodedMatrix ctx = encode(enc, src);
    const TokenSequence out = decode_greedy(dec, ctx, tgt.lang, dec.config.l_max - 2);
    if (out.ids == tgt.ids) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

TrainLog train_teacher(EncoderParams& enc, DecoderParams& dec, const Vocab& vocab,
                       const std::vector<PairRecord>& bi_train,
                       const std::vector<PairRecord>& bi_heldout, const TrainHyper& hyper) {
  bool has_to = false, has_from = false;
  for (const auto& r : bi_train) {
    has_to = has_to || r.direction == Direction::ToPivot;
    has_from = has_from || r.direction == Direction::FromPivot;
  }
  if (!has_to || !has_from)
    throw InputError("train_teacher: dataset is not bi-directional (both directions required)");
  if (bi_heldout.empty()) throw InputError("train_teacher: empty held-out set");

  const ModelConfig& cfg = enc.config;
  const auto examples = make_examples(vocab, bi_train, cfg.l_max);

  // Fixed held-out subsample keeps the per-epoch gate cheap and deterministic.
  std::vector<PairRecord> gate = bi_heldout;
  if (gate.size() > 1200) {
    auto gen = seeded_stream(hyper.seed, 42);
    shuffle_inplace(gate, gen);
    gate.resize(1200);
  }

  EncoderParams best_enc;
  DecoderParams best_dec;
  TrainerHooks hooks;
  hooks.params = trainable_only(named_params(enc, "enc."));
  for (auto& p : trainable_only(named_params(dec, "dec."))) hooks.params.push_back(p);
  if (hooks.params.empty()) throw ContractError("train_teacher: model has no trainable parameters");

  hooks.batch_loss = [&](Tape& tape, const std::vector<std::size_t>& batch,
                         std::mt19937_64& aux) -> Tensor {
    Tensor acc;
    for (std::size_t i : batch) {
      const ExamplePair& ex = examples[i];
      ForwardCtx fwd{&tape, &aux, cfg.dropout, nullptr};
      EncodedMatrix ctx = encode(enc, ex.src, fwd);
      Tensor logits = teacher_forcing_logits(dec, ctx, ex.tgt, fwd);
      Tensor l = cross_entropy(logits, targets_with_eos(ex.tgt), Vocab::kPad, &tape);
      acc = acc.defined() ? add(acc, l, &tape) : l;
    }
    return affine(acc, 1.f / static_cast<float>(batch.size()), 0.f, &tape);
  };
  hooks.metric = [&]() { return exact_match_rate(enc, dec, vocab, gate); };
  hooks.snapshot = [&]() {
    best_enc = clone(enc);
    best_dec = clone(dec);
  };
  hooks.restore = [&]() {
    copy_params(enc, best_enc);
    copy_params(dec, best_dec);
  };
  return run_epochs(examples.size(), hyper, std::move(hooks));
}

// ---- phase 1: encoder alignment ------------------------------------------------

double mean_encoded_similarity(const EncoderParams& teacher_enc, const EncoderParams& student_enc,
                               const std::vector<DistillItem>& items, std::int64_t* skipped) {
  double sum = 0.0;
  std::int64_t n = 0, skip = 0;
  for (const auto& item : items) {
    if (!item.x_t) throw InputError("mean_encoded_similarity: items must carry (x_s, x_t) pairs");
    EncodedMatrix v2 = encode(teacher_enc, *item.x_t);
    EncodedMatrix v2p = encode(student_enc, item.x_s);
    try {
      sum += encoded_cosine(v2, v2p);
      ++n;
    } catch (const DegenerateVectorError&) {
      ++skip;
    }
  }
  if (skipped) *skipped += skip;
  return n ? sum / static_cast<double>(n) : 0.0;
}

TrainLog distill_student_encoder(const EncoderParams& teacher_enc, EncoderParams& student_enc,
                                 const std::vector<DistillItem>& train_items,
                                 const std::vector<DistillItem>& heldout_items,
                                 const TrainHyper& hyper, const DistillObserver& observer) {
  if (!is_frozen(teacher_enc))
    throw ContractError("distill_student_encoder: teacher encoder must be frozen");
  if (is_frozen(student_enc))
    throw ContractError("distill_student_encoder: student encoder is frozen, nothing to train");
  for (const auto& item : train_items)
    if (!item.x_t) throw InputError("distill_student_encoder: items must carry (x_s, x_t) pairs");

  const ModelConfig& cfg = student_enc.config;
  std::int64_t skipped = 0;

  EncoderParams best;
  TrainerHooks hooks;
  hooks.params = trainable_only(named_params(student_enc, "student_enc."));
  hooks.batch_loss = [&](Tape& tape, const std::vector<std::size_t>& batch,
                         std::mt19937_64& aux) -> Tensor {
    Tensor acc;
    int used = 0;
    for (std::size_t i : batch) {
      const DistillItem& item = train_items[i];
      EncodedMatrix v2 = encode(teacher_enc, *item.x_t);
      ForwardCtx fwd{&tape, &aux, cfg.dropout, nullptr};
      EncodedMatrix v2p = encode(student_enc, item.x_s, fwd);
      Tensor l;
      try {
        l = cosine_distill_loss(v2, v2p, &tape);
      } catch (const DegenerateVectorError&) {
        ++skipped;
        continue;
      }
      if (observer) observer(v2, v2p, static_cast<double>(l.item()));
      acc = acc.defined() ? add(acc, l, &tape) : l;
      ++used;
    }
    if (!used) return {};
    return affine(acc, 1.f / static_cast<float>(used), 0.f, &tape);
  };
  hooks.metric = [&]() { return mean_encoded_similarity(teacher_enc, student_enc, heldout_items); };
  hooks.snapshot = [&]() { best = clone(student_enc); };
  hooks.restore = [&]() { copy_params(student_enc, best); };

  TrainLog log = run_epochs(train_items.size(), hyper, std::move(hooks));
  log.skipped = skipped;
  return log;
}

// ---- phase 2: decoder finetuning ------------------------------------------------

DecoderParams finetune_decoder_general(const DecoderParams& teacher_dec,
                                       const EncoderParams& teacher_enc,
                                       const EncoderParams& student_enc, const Vocab& vocab,
                                       const std::vector<DistillItem>& train_items,
                                       const TrainHyper& hyper, const DecoderMetric& heldout_metric,
                                       TrainLog* log_out) {
  if (!is_frozen(teacher_dec))
    throw ContractError("finetune_decoder_general: teacher decoder must be frozen");
  if (!is_frozen(teacher_enc))
    throw ContractError("finetune_decoder_general: teacher encoder must be frozen");
  if (!is_frozen(student_enc))
    throw ContractError("finetune_decoder_general: student encoder must be frozen");
  for (const auto& item : train_items)
    if (!item.x_t) throw InputError("finetune_decoder_general: items must carry (x_s, x_t) pairs");

  DecoderParams student_dec = clone(teacher_dec);
  set_trainable(student_dec, true);
  const ModelConfig& cfg = student_dec.config;

  // Output languages are the scripts; the pivot never appears as a pipeline
  // target.
  std::vector<int> script_langs;
  for (int id = 3; id < 3 + vocab.n_languages(); ++id)
    if (vocab.language_name(id) != kPivotName) script_langs.push_back(id);
  if (script_langs.empty())
    throw InputError("finetune_decoder_general: vocabulary has no script languages");

  // Teacher targets are a pure function of (example, language); cache them
  // across epochs. An empty optional marks an example the teacher failed on.
  std::map<std::pair<std::size_t, int>, std::optional<TokenSequence>> y_cache;
  std::int64_t skipped = 0;

  DecoderParams best;
  TrainerHooks hooks;
  hooks.params = trainable_only(named_params(student_dec, "student_dec."));
  hooks.batch_loss = [&](Tape& tape, const std::vector<std::size_t>& batch,
                         std::mt19937_64& aux) -> Tensor {
    Tensor acc;
    int used = 0;
    for (std::size_t i : batch) {
      const DistillItem& item = train_items[i];
      const int lang = script_langs[uniform_u64(aux, script_langs.size())];
      auto key = std::make_pair(i, lang);
      auto it = y_cache.find(key);
      if (it == y_cache.end()) {
        EncodedMatrix v2 = encode(teacher_enc, *item.x_t);
        TokenSequence y = decode_greedy(teacher_dec, v2, lang, cfg.l_max - 2);
        it = y_cache.emplace(key, y.ids.empty() ? std::nullopt : std::optional<TokenSequence>(y)).first;
      }
      if (!it->second) {
        ++skipped;
        continue;
      }
      const TokenSequence& y_t = *it->second;
      EncodedMatrix v2p = encode(student_enc, item.x_s);
      ForwardCtx fwd{&tape, &aux, cfg.dropout, nullptr};
      Tensor logits = teacher_forcing_logits(student_dec, v2p, y_t, fwd);
      Tensor l = cross_entropy(logits, targets_with_eos(y_t), Vocab::kPad, &tape);
      acc = acc.defined() ? add(acc, l, &tape) : l;
      ++used;
    }
    if (!used) return {};
    return affine(acc, 1.f / static_cast<float>(used), 0.f, &tape);
  };
  hooks.metric = [&]() { return heldout_metric(student_dec); };
  hooks.snapshot = [&]() { best = clone(student_dec); };
  hooks.restore = [&]() { copy_params(student_dec, best); };

  TrainLog log = run_epochs(train_items.size(), hyper, std::move(hooks));
  log.skipped = skipped;
  if (log_out) *log_out = log;
  return student_dec;
}

DecoderParams finetune_decoder_reconstruction(const EncoderParams& student_enc,
                                              const DecoderParams& teacher_dec,
                                              const std::vector<DistillItem>& train_inputs,
                                              const TrainHyper& hyper,
                                              const DecoderMetric& heldout_metric,
                                              TrainLog* log_out) {
  if (!is_frozen(teacher_dec))
    throw ContractError("finetune_decoder_reconstruction: teacher decoder must be frozen");
  if (!is_frozen(student_enc))
    throw ContractError("finetune_decoder_reconstruction: student encoder must be frozen");
  for (const auto& item : train_inputs)
    if (item.x_t)
      throw InterfaceError(
          "finetune_decoder_reconstruction: loader yields pairs, expected inputs only");

  DecoderParams student_dec = clone(teacher_dec);
  set_trainable(student_dec, true);
  const ModelConfig& cfg = student_dec.config;

  DecoderParams best;
  TrainerHooks hooks;
  hooks.params = trainable_only(named_params(student_dec, "student_dec."));
  hooks.batch_loss = [&](Tape& tape, const std::vector<std::size_t>& batch,
                         std::mt19937_64& aux) -> Tensor {
    Tensor acc;
    for (std::size_t i : batch) {
      const TokenSequence& x_s = train_inputs[i].x_s;
      EncodedMatrix v2p = encode(student_enc, x_s);
      ForwardCtx fwd{&tape, &aux, cfg.dropout, nullptr};
      // Reconstruction decodes with the input's own language token.
      Tensor logits = teacher_forcing_logits(student_dec, v2p, x_s, fwd);
      Tensor l = cross_entropy(logits, targets_with_eos(x_s), Vocab::kPad, &tape);
      acc = acc.defined() ? add(acc, l, &tape) : l;
    }
    return affine(acc, 1.f / static_cast<float>(batch.size()), 0.f, &tape);
  };
  hooks.metric = [&]() { return heldout_metric(student_dec); };
  hooks.snapshot = [&]() { best = clone(student_dec); };
  hooks.restore = [&]() { copy_params(student_dec, best); };

  TrainLog log = run_epochs(train_inputs.size(), hyper, std::move(hooks));
  if (log_out) *log_out = log;
  return student_dec;
}

// ---- parameter copies ------------------------------------------------------------

namespace {

template <typename Params>
void copy_params_impl(Params& dst, const Params& src, const char* who) {
  std::vector<const Tensor*> sources;
  src.visit(ConstParamVisitor([&](const std::string&, const Tensor& t) { sources.push_back(&t); }));
  std::size_t i = 0;
  dst.visit(ParamVisitor([&](const std::string& name, Tensor& t) {
    if (i >= sources.size()) throw ShapeError(std::string(who) + ": parameter sets differ");
    const Tensor& s = *sources[i++];
    if (s.shape() != t.shape())
      throw ShapeError(std::string(who) + ": shape mismatch for '" + name + "'");
    std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
  }));
  if (i != sources.size()) throw ShapeError(std::string(who) + ": parameter sets differ");
}

}  // namespace

void copy_params(EncoderParams& dst, const EncoderParams& src) {
  copy_params_impl(dst, src, "copy_params(encoder)");
}

void copy_params(DecoderParams& dst, const DecoderParams& src) {
  copy_params_impl(dst, src, "copy_params(decoder)");
}

}  // namespace pipefold
