#include "pipefold/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "pipefold/errors.hpp"
#include "pipefold/utf8.hpp"

namespace pipefold {

// ---- edit counts -------------------------------------------------------------

namespace {

enum class EditOp : std::uint8_t { None, Match, Sub, Del, Ins };

std::vector<int> codepoints_of(const std::string& s) {
  std::vector<int> out;
  for (const auto& ch : utf8_chars(s)) {
    int cp = 0;
    for (unsigned char b : ch) cp = (cp << 8) | b;
    out.push_back(cp);
  }
  return out;
}

}  // namespace

EditCounts edit_counts(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  const std::size_t n = reference.size(), m = hypothesis.size();
  std::vector<int> cost((n + 1) * (m + 1), 0);
  std::vector<EditOp> op((n + 1) * (m + 1), EditOp::None);
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };

  for (std::size_t i = 1; i <= n; ++i) {
    cost[at(i, 0)] = static_cast<int>(i);
    op[at(i, 0)] = EditOp::Del;
  }
  for (std::size_t j = 1; j <= m; ++j) {
    cost[at(0, j)] = static_cast<int>(j);
    op[at(0, j)] = EditOp::Ins;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const bool eq = reference[i - 1] == hypothesis[j - 1];
      int best = cost[at(i - 1, j - 1)] + (eq ? 0 : 1);
      EditOp chosen = eq ? EditOp::Match : EditOp::Sub;
      if (cost[at(i - 1, j)] + 1 < best) {
        best = cost[at(i - 1, j)] + 1;
        chosen = EditOp::Del;
      }
      if (cost[at(i, j - 1)] + 1 < best) {
        best = cost[at(i, j - 1)] + 1;
        chosen = EditOp::Ins;
      }
      cost[at(i, j)] = best;
      op[at(i, j)] = chosen;
    }
  }

  EditCounts counts;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    switch (op[at(i, j)]) {
      case EditOp::Match:
        ++counts.correct;
        --i;
        --j;
        break;
      case EditOp::Sub:
        ++counts.substitutions;
        --i;
        --j;
        break;
      case EditOp::Del:
        ++counts.deletions;
        --i;
        break;
      case EditOp::Ins:
        ++counts.insertions;
        --j;
        break;
      case EditOp::None:
        throw Error("edit_counts: broken traceback");
    }
  }
  return counts;
}

EditCounts edit_counts(const std::string& reference, const std::string& hypothesis) {
  return edit_counts(codepoints_of(reference), codepoints_of(hypothesis));
}

double cer(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty() && hypothesis.empty())
    throw UndefinedMetricError("cer: both sequences empty");
  const EditCounts c = edit_counts(reference, hypothesis);
  return static_cast<double>(c.errors()) / static_cast<double>(c.errors() + c.correct);
}

double cer(const std::string& reference, const std::string& hypothesis) {
  return cer(codepoints_of(reference), codepoints_of(hypothesis));
}

// ---- phonetic accuracy ---------------------------------------------------------

double phonetic_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<ChainedExample>& examples) {
  if (predictions.size() != examples.size())
    throw InputError("phonetic_accuracy: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(examples.size()) + " examples");
  if (examples.empty()) throw InputError("phonetic_accuracy: empty evaluation set");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].allowed_targets.count(predictions[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

// ---- emergent wins --------------------------------------------------------------

WinPartition emergent_partition(const std::vector<std::string>& teacher_preds,
                                const std::vector<std::string>& student_preds,
                                const std::vector<ChainedExample>& examples) {
  if (teacher_preds.size() != examples.size() || student_preds.size() != examples.size())
    throw InputError("emergent_partition: prediction lists are not aligned with the examples");
  WinPartition p;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const bool t_ok = examples[i].allowed_targets.count(teacher_preds[i]) > 0;
    const bool s_ok = examples[i].allowed_targets.count(student_preds[i]) > 0;
    if (t_ok && s_ok) p.both_correct.push_back(i);
    else if (t_ok) p.teacher_only.push_back(i);
    else if (s_ok) p.student_only.push_back(i);
    else p.both_wrong.push_back(i);
  }
  return p;
}

// ---- encoder similarity ----------------------------------------------------------

SimilarityReport encoder_similarity_report(const EncoderParams& teacher_enc,
                                           const EncoderParams& student_enc, const Vocab& vocab,
                                           const SimilarityInputs& inputs) {
  SimilarityReport report;
  auto run_split = [&](const std::map<std::string, std::vector<DistillItem>>& split,
                       const std::string& split_name) {
    std::map<std::string, std::pair<double, std::int64_t>> sums;
    for (const auto& [lang, items] : split) {
      for (const auto& item : items) {
        if (!item.x_t)
          throw InputError("encoder_similarity_report: items must carry (x_s, x_t) pairs");
        EncodedMatrix v2 = encode(teacher_enc, *item.x_t);
        EncodedMatrix v2p = encode(student_enc, item.x_s);
        double cos = 0.0;
        try {
          cos = encoded_cosine(v2, v2p);
        } catch (const DegenerateVectorError&) {
          ++report.skipped;
          continue;
        }
        sums[lang].first += cos;
        sums[lang].second += 1;
        report.records.push_back({lang, split_name, vocab.decode_word(item.x_s.ids), cos});
      }
    }
    return sums;
  };

  const auto train_sums = run_split(inputs.train, "train");
  const auto test_sums = run_split(inputs.test, "test");

  double train_total = 0.0, test_total = 0.0;
  std::int64_t train_n = 0, test_n = 0;
  for (const auto& [lang, st] : train_sums) {
    report.per_source[lang].train = st.second ? st.first / static_cast<double>(st.second) : 0.0;
    train_total += st.first;
    train_n += st.second;
  }
  for (const auto& [lang, st] : test_sums) {
    report.per_source[lang].test = st.second ? st.first / static_cast<double>(st.second) : 0.0;
    test_total += st.first;
    test_n += st.second;
  }
  report.overall_train = train_n ? train_total / static_cast<double>(train_n) : 0.0;
  report.overall_test = test_n ? test_total / static_cast<double>(test_n) : 0.0;
  report.train_test_gap = report.overall_train - report.overall_test;
  return report;
}

// ---- latency ----------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double clock_granularity_ms() {
  double best = 1e9;
  for (int i = 0; i < 32; ++i) {
    auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
  }
  return best;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

LatencyReport latency_bench(const PipelineSpec& pipeline, const StudentModel& student,
                            const LatencyInputs& inputs, int repetitions) {
  if (repetitions < 10) throw ValueError("latency_bench: at least 10 repetitions required");
  if (inputs.by_length.empty()) throw InputError("latency_bench: no words to measure");
  pipeline.validate();

  const double granularity = clock_granularity_ms();

  LatencyReport report;
  report.repetitions = repetitions;
  double weight_sum = 0.0, pipeline_weighted = 0.0, student_weighted = 0.0;

  for (const auto& [length, words] : inputs.by_length) {
    if (words.empty()) continue;
    // Warm-up pass, excluded from the statistics.
    (void)run_pipeline(pipeline, words.front().first, words.front().second);
    (void)student.predict(words.front().first, words.front().second);

    std::vector<double> pipe_times, student_times;
    pipe_times.reserve(words.size() * static_cast<std::size_t>(repetitions));
    student_times.reserve(words.size() * static_cast<std::size_t>(repetitions));
    for (const auto& [word, tgt] : words) {
      for (int r = 0; r < repetitions; ++r) {
        auto t0 = Clock::now();
        (void)run_pipeline(pipeline, word, tgt);
        auto t1 = Clock::now();
        (void)student.predict(word, tgt);
        auto t2 = Clock::now();
        pipe_times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        student_times.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      }
    }
    LatencyBucket bucket;
    bucket.length = length;
    bucket.words = static_cast<int>(words.size());
    bucket.pipeline_ms = median(pipe_times);
    bucket.student_ms = median(student_times);
    if (bucket.student_ms < 2.0 * granularity)
      throw ResolutionError("latency_bench: clock granularity " + std::to_string(granularity) +
                            " ms is too coarse for intervals near " +
                            std::to_string(bucket.student_ms) + " ms");
    report.buckets.push_back(bucket);
    weight_sum += bucket.words;
    pipeline_weighted += bucket.words * bucket.pipeline_ms;
    student_weighted += bucket.words * bucket.student_ms;
  }

  report.weighted_pipeline_ms = pipeline_weighted / weight_sum;
  report.weighted_student_ms = student_weighted / weight_sum;
  report.speedup = report.weighted_pipeline_ms / report.weighted_student_ms;
  return report;
}

PassCheck verify_pass_counts(const PipelineSpec& pipeline, const StudentModel& student,
                             const TokenSequence& probe, int tgt_lang) {
  PassCheck check;
  InferenceStats pipe_stats;
  (void)run_pipeline(pipeline, probe, tgt_lang, nullptr, &pipe_stats);
  check.pipeline_passes = pipe_stats.total();
  InferenceStats student_stats;
  (void)student.predict(probe, tgt_lang, &student_stats);
  check.student_passes = student_stats.total();
  return check;
}

// ---- JSON report -------------------------------------------------------------------

std::string metrics_report_json(const EvalReport& report, const Provenance& provenance) {
  nlohmann::json j;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : report.pairs) {
    j["pairs"].push_back({{"src", p.src},
                          {"tgt", p.tgt},
                          {"count", p.count},
                          {"teacher_phonetic_accuracy", p.teacher_phonetic},
                          {"student_phonetic_accuracy", p.student_phonetic},
                          {"teacher_cer", p.teacher_cer},
                          {"student_cer", p.student_cer},
                          {"agreement", p.agreement}});
  }

  nlohmann::json per_source = nlohmann::json::object();
  for (const auto& [lang, cell] : report.similarity.per_source)
    per_source[lang] = {{"train", cell.train}, {"test", cell.test}};
  j["similarity"] = {{"per_source", per_source},
                     {"overall_train", report.similarity.overall_train},
                     {"overall_test", report.similarity.overall_test},
                     {"train_test_gap", report.similarity.train_test_gap},
                     {"skipped", report.similarity.skipped}};

  nlohmann::json latency = {{"passes_per_word",
                             {{"pipeline", report.passes.pipeline_passes},
                              {"student", report.passes.student_passes}}}};
  if (report.latency) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : report.latency->buckets)
      buckets.push_back({{"length", b.length},
                         {"words", b.words},
                         {"pipeline_ms", b.pipeline_ms},
                         {"student_ms", b.student_ms}});
    latency["buckets"] = buckets;
    latency["weighted_pipeline_ms"] = report.latency->weighted_pipeline_ms;
    latency["weighted_student_ms"] = report.latency->weighted_student_ms;
    latency["speedup"] = report.latency->speedup;
    latency["repetitions"] = report.latency->repetitions;
  }
  j["latency"] = latency;

  nlohmann::json wins = {{"both_correct", report.wins.both_correct},
                         {"teacher_only", report.wins.teacher_only},
                         {"student_only", report.wins.student_only},
                         {"both_wrong", report.wins.both_wrong}};
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& ex : report.wins.student_only_examples)
    examples.push_back({{"src_lang", ex.src_lang},
                        {"tgt_lang", ex.tgt_lang},
                        {"word", ex.word},
                        {"teacher_pred", ex.teacher_pred},
                        {"student_pred", ex.student_pred}});
  wins["student_only_examples"] = examples;
  j["wins"] = wins;

  j["provenance"] = {{"teacher_digest", provenance.teacher_digest},
                     {"student_digest", provenance.student_digest},
                     {"dataset_seed", provenance.dataset_seed},
                     {"timestamp", provenance.timestamp}};

  return j.dump(2) + "\n";
}

}  // namespace pipefold
