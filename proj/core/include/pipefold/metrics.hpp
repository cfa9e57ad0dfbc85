#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pipefold/distill.hpp"
#include "pipefold/model.hpp"
#include "pipefold/taskgen.hpp"

namespace pipefold {

// ---- character error rate ----------------------------------------------------

// Counts from a Levenshtein-optimal alignment. Ties between alignments break
// as match > substitution > deletion > insertion, which makes the counts
// deterministic (cer itself is tie-invariant).
struct EditCounts {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int correct = 0;

  int errors() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

EditCounts edit_counts(const std::vector<int>& reference, const std::vector<int>& hypothesis);
EditCounts edit_counts(const std::string& reference, const std::string& hypothesis);

// (S + D + I) / (S + D + I + C). Throws UndefinedMetricError when both
// sequences are empty.
double cer(const std::vector<int>& reference, const std::vector<int>& hypothesis);
double cer(const std::string& reference, const std::string& hypothesis);

// ---- phonetic accuracy ---------------------------------------------------------

// Fraction of predictions contained in their example's allowed-target set.
double phonetic_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<ChainedExample>& examples);

// ---- emergent-win partition ----------------------------------------------------

// Index sets partitioning the evaluated examples by which model's prediction
// was phonetically acceptable.
struct WinPartition {
  std::vector<std::size_t> both_correct;
  std::vector<std::size_t> teacher_only;
  std::vector<std::size_t> student_only;
  std::vector<std::size_t> both_wrong;

  std::size_t total() const {
    return both_correct.size() + teacher_only.size() + student_only.size() + both_wrong.size();
  }
};

WinPartition emergent_partition(const std::vector<std::string>& teacher_preds,
                                const std::vector<std::string>& student_preds,
                                const std::vector<ChainedExample>& examples);

// ---- encoder similarity report --------------------------------------------------

struct SimilarityRecord {
  std::string source_lang;
  std::string split;  // "train" or "test"
  std::string word;
  double cosine = 0.0;
};

struct SimilarityCell {
  double train = 0.0;
  double test = 0.0;
};

struct SimilarityReport {
  std::map<std::string, SimilarityCell> per_source;
  double overall_train = 0.0;
  double overall_test = 0.0;
  double train_test_gap = 0.0;  // train mean minus test mean
  std::int64_t skipped = 0;
  std::vector<SimilarityRecord> records;
};

struct SimilarityInputs {
  // per source language: (x_s, x_t) items for each split
  std::map<std::string, std::vector<DistillItem>> train;
  std::map<std::string, std::vector<DistillItem>> test;
};

SimilarityReport encoder_similarity_report(const EncoderParams& teacher_enc,
                                           const EncoderParams& student_enc, const Vocab& vocab,
                                           const SimilarityInputs& inputs);

// ---- latency ---------------------------------------------------------------------

struct LatencyBucket {
  int length = 0;
  int words = 0;
  double pipeline_ms = 0.0;  // median per-word wall time
  double student_ms = 0.0;
};

struct LatencyReport {
  std::vector<LatencyBucket> buckets;
  double weighted_pipeline_ms = 0.0;  // weighted by bucket word counts
  double weighted_student_ms = 0.0;
  double speedup = 0.0;  // pipeline / student
  int repetitions = 0;
};

struct LatencyInputs {
  // words grouped by length, each with its target language
  std::map<int, std::vector<std::pair<TokenSequence, int>>> by_length;
};

// Serial CPU timing, one warm-up pass per system excluded from statistics.
// Throws ValueError when repetitions < 10, ResolutionError when the clock is
// too coarse for the measured intervals.
LatencyReport latency_bench(const PipelineSpec& pipeline, const StudentModel& student,
                            const LatencyInputs& inputs, int repetitions);

// Forward passes per word for both systems, measured on one probe input.
struct PassCheck {
  std::int64_t pipeline_passes = 0;  // expected 4: encode, decode, encode, decode
  std::int64_t student_passes = 0;   // expected 2
};

PassCheck verify_pass_counts(const PipelineSpec& pipeline, const StudentModel& student,
                             const TokenSequence& probe, int tgt_lang);

// ---- aggregate report ---------------------------------------------------------------

struct PairEval {
  std::string src;
  std::string tgt;
  int count = 0;
  double teacher_phonetic = 0.0;
  double student_phonetic = 0.0;
  double teacher_cer = 0.0;
  double student_cer = 0.0;
  double agreement = 0.0;  // student output equals teacher pipeline output
};

struct WinExample {
  std::string src_lang;
  std::string tgt_lang;
  std::string word;
  std::string teacher_pred;
  std::string student_pred;
};

struct WinSummary {
  std::int64_t both_correct = 0;
  std::int64_t teacher_only = 0;
  std::int64_t student_only = 0;
  std::int64_t both_wrong = 0;
  std::vector<WinExample> student_only_examples;
};

struct EvalReport {
  std::vector<PairEval> pairs;
  SimilarityReport similarity;
  PassCheck passes;
  std::optional<LatencyReport> latency;
  WinSummary wins;
};

struct Provenance {
  std::string teacher_digest;
  std::string student_digest;
  std::uint64_t dataset_seed = 0;
  std::string timestamp;
};

// Stable JSON schema: {pairs: [...], similarity: {...}, latency: {...},
// wins: {...}, provenance: {...}}.
std::string metrics_report_json(const EvalReport& report, const Provenance& provenance);

}  // namespace pipefold
