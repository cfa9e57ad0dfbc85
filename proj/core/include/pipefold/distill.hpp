#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pipefold/model.hpp"
#include "pipefold/taskgen.hpp"

namespace pipefold {

// ---- pipeline ----------------------------------------------------------------

// A chained inference pipeline. Each stage decodes into out_lang; the final
// stage's out_lang is the default target and is overridden per call. For the
// mirror case both stages reference the same parameter set.
struct PipelineStage {
  const EncoderParams* encoder = nullptr;
  const DecoderParams* decoder = nullptr;
  int out_lang = -1;
};

struct PipelineSpec {
  std::vector<PipelineStage> stages;
  void validate() const;  // two stages, non-null parameters
};

// Intermediate values of one pipeline run, kept for distillation and pass
// accounting. v2 becomes available after the third forward pass.
struct PipelineTrace {
  EncodedMatrix v1;
  TokenSequence x_t;
  EncodedMatrix v2;
  std::int64_t passes_before_v2 = 0;
};

// Executes encode / decode / encode / decode. Throws PipelineError when the
// intermediate output is empty (the error-propagation case).
TokenSequence run_pipeline(const PipelineSpec& pipeline, const TokenSequence& x_s, int tgt_lang,
                           PipelineTrace* trace = nullptr, InferenceStats* stats = nullptr);

// Single-stage condensed model: one encoder pass plus one decoder pass per word.
struct StudentModel {
  EncoderParams encoder;
  DecoderParams decoder;

  TokenSequence predict(const TokenSequence& x_s, int tgt_lang,
                        InferenceStats* stats = nullptr) const;
};

// Throws AssemblyError when the two configs do not match.
StudentModel assemble_student(EncoderParams encoder, DecoderParams decoder);

// Convenience: the bidirectional-teacher special case where one model serves
// as both pipeline stages.
PipelineSpec mirror_pipeline(const EncoderParams& enc, const DecoderParams& dec, int pivot_lang,
                             int default_tgt_lang);

// ---- training ----------------------------------------------------------------

struct TrainHyper {
  int epochs = 4;
  int batch_size = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  int patience = 3;      // epochs without held-out improvement before stopping
  double target = 1.0;   // stop early once the held-out metric reaches this

  void validate(std::size_t dataset_size) const;
};

struct TrainLog {
  std::vector<double> epoch_loss;    // mean training loss per epoch
  std::vector<double> epoch_metric;  // held-out metric per epoch
  int best_epoch = -1;
  double best_metric = 0.0;
  std::int64_t skipped = 0;  // examples skipped (degenerate or empty targets)
};

// One distillation example. Phase 1 and the general decoder finetune require
// the (x_s, x_t) pair; the reconstruction finetune requires inputs only and
// rejects loaders that still carry pairs.
struct DistillItem {
  TokenSequence x_s;
  std::optional<TokenSequence> x_t;
};

std::vector<DistillItem> pair_items(const Vocab& vocab, const std::vector<PairRecord>& to_pivot);
std::vector<DistillItem> input_items(const Vocab& vocab, const std::vector<PairRecord>& to_pivot);

// Cross-entropy teacher-forcing training of one bidirectional model on the
// BI dataset. Restores the best held-out checkpoint when the target is not
// reached within the epoch budget. Held-out metric: exact match of greedy
// decodes, evaluated on (a fixed subsample of) bi_heldout.
TrainLog train_teacher(EncoderParams& enc, DecoderParams& dec, const Vocab& vocab,
                       const std::vector<PairRecord>& bi_train,
                       const std::vector<PairRecord>& bi_heldout, const TrainHyper& hyper);

// Greedy-decode exact match over pairs, the teacher quality metric.
double exact_match_rate(const EncoderParams& enc, const DecoderParams& dec, const Vocab& vocab,
                        const std::vector<PairRecord>& pairs);

// Observation hook for the encoder-distillation loop (testing aid).
using DistillObserver =
    std::function<void(const EncodedMatrix& v2, const EncodedMatrix& v2p, double loss)>;

// Phase 1: aligns the student encoder to the teacher encoder by minimizing
// 1 - cosine over (x_s, x_t) pairs. Only the student parameters move; the
// teacher must already be frozen (ContractError otherwise). Held-out metric:
// mean cosine similarity.
TrainLog distill_student_encoder(const EncoderParams& teacher_enc, EncoderParams& student_enc,
                                 const std::vector<DistillItem>& train_items,
                                 const std::vector<DistillItem>& heldout_items,
                                 const TrainHyper& hyper,
                                 const DistillObserver& observer = nullptr);

// Mean held-out cosine between teacher and student encodings.
double mean_encoded_similarity(const EncoderParams& teacher_enc, const EncoderParams& student_enc,
                               const std::vector<DistillItem>& items,
                               std::int64_t* skipped = nullptr);

using DecoderMetric = std::function<double(const DecoderParams& current)>;

// Phase 2, general form: duplicates the teacher decoder and trains the copy
// to reproduce the teacher's own greedy outputs on student encodings.
// Target languages are the scripts, sampled per example per epoch. All of
// teacher_dec, teacher_enc and student_enc must be frozen.
DecoderParams finetune_decoder_general(const DecoderParams& teacher_dec,
                                       const EncoderParams& teacher_enc,
                                       const EncoderParams& student_enc, const Vocab& vocab,
                                       const std::vector<DistillItem>& train_items,
                                       const TrainHyper& hyper, const DecoderMetric& heldout_metric,
                                       TrainLog* log = nullptr);

// Phase 2, mirror special case: the copied decoder is trained to reconstruct
// each input from the student encoding, decoding with the input's own
// language token. Requires an inputs-only loader and a frozen student encoder.
DecoderParams finetune_decoder_reconstruction(const EncoderParams& student_enc,
                                              const DecoderParams& teacher_dec,
                                              const std::vector<DistillItem>& train_inputs,
                                              const TrainHyper& hyper,
                                              const DecoderMetric& heldout_metric,
                                              TrainLog* log = nullptr);

// Copies parameter values of src into dst (shapes must match).
void copy_params(EncoderParams& dst, const EncoderParams& src);
void copy_params(DecoderParams& dst, const DecoderParams& src);

}  // namespace pipefold
