#include "pipefold/workflow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>

#include "pipefold/distill.hpp"
#include "pipefold/errors.hpp"
#include "pipefold/fsio.hpp"
#include "pipefold/rng.hpp"

namespace pipefold::workflow {

namespace fs = std::filesystem;

std::string DataPaths::pairs(DatasetFormat format, bool train) const {
  std::string name = train ? "train_" : "test_";
  switch (format) {
    case DatasetFormat::UniToPivot: name += "to_pivot"; break;
    case DatasetFormat::UniFromPivot: name += "from_pivot"; break;
    case DatasetFormat::Bi: name += "bi"; break;
  }
  return dir + "/" + name + ".tsv";
}

std::string DataPaths::chained_test() const { return dir + "/chained_test.tsv"; }

std::string DataPaths::allowed(const std::string& src, const std::string& tgt) const {
  return dir + "/allowed_" + src + "_" + tgt + ".tsv";
}

std::uint64_t phase_seed(std::uint64_t base, int phase) {
  return splitmix64(base + 1000003ULL * static_cast<std::uint64_t>(phase));
}

TaskContext make_context(const RunConfig& config) {
  config.validate();
  CorpusConfig task = config.task;
  task.seed = config.seed;
  TaskContext ctx{build_corpus(task), {}, config.model};
  ctx.vocab = build_task_vocab(ctx.corpus.tables);
  ctx.model.vocab_size = ctx.vocab.size();
  ctx.model.n_languages = ctx.vocab.n_languages();
  ctx.model.validate();
  return ctx;
}

// ---- data generation ----------------------------------------------------------

void generate_data(const RunConfig& config, const std::string& out_dir) {
  TaskContext ctx = make_context(config);
  fs::create_directories(out_dir);
  DataPaths paths{out_dir};

  const Corpus& corpus = ctx.corpus;
  for (bool train : {true, false}) {
    const auto& words = train ? corpus.train_words : corpus.test_words;
    for (DatasetFormat f : {DatasetFormat::UniToPivot, DatasetFormat::UniFromPivot, DatasetFormat::Bi})
      write_pairs(paths.pairs(f, train), make_dataset(f, corpus.tables, words));
  }

  // Held-out chained cases for every ordered script pair, canonical targets
  // in the 4-column pair format, allowed variants in per-pair files.
  std::vector<PairRecord> chained;
  for (const auto& src : corpus.script_ids()) {
    for (const auto& tgt : corpus.script_ids()) {
      if (src == tgt) continue;
      std::vector<ChainedExample> examples;
      for (const auto& word : corpus.test_words.at(src)) {
        ChainedExample ex = chained_ground_truth(word, src, tgt, corpus.tables);
        chained.push_back({src, word, tgt, ex.target, Direction::ToPivot});
        examples.push_back(std::move(ex));
      }
      write_allowed(paths.allowed(src, tgt), examples);
    }
  }
  write_pairs(paths.chained_test(), chained);
}

// ---- shared loading helpers ------------------------------------------------------

namespace {

void require_matches_context(const TaskContext& ctx, const CheckpointHeader& header,
                             const std::string& what) {
  if (!(header.config == ctx.model))
    throw ConfigError(what + ": checkpoint model config does not match the run config");
  if (header.vocab_tokens != ctx.vocab.tokens())
    throw ConfigError(what + ": checkpoint vocabulary does not match the task configuration");
}

std::vector<PairRecord> read_required_pairs(const std::string& path) {
  auto records = read_pairs(path);
  if (records.empty()) throw InputError("dataset file '" + path + "' is empty");
  return records;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int word_length(const TokenSequence& seq) { return seq.length(); }

}  // namespace

std::vector<ChainedCase> read_chained_cases(const Vocab& vocab, const std::string& path) {
  std::vector<ChainedCase> out;
  for (const auto& r : read_required_pairs(path)) {
    ChainedCase c;
    c.src = r.src_lang;
    c.tgt = r.tgt_lang;
    c.word = r.src_word;
    c.canonical = r.tgt_word;
    c.x_s = to_sequence(vocab, r.src_word, r.src_lang);
    c.tgt_lang = vocab.language_id(r.tgt_lang);
    out.push_back(std::move(c));
  }
  return out;
}

// ---- train teacher ---------------------------------------------------------------

TrainResult cmd_train_teacher(const RunConfig& config, const std::string& data_dir,
                              const std::string& out_path) {
  TaskContext ctx = make_context(config);
  DataPaths paths{data_dir};
  const auto train = read_required_pairs(paths.pairs(DatasetFormat::Bi, true));
  const auto heldout = read_required_pairs(paths.pairs(DatasetFormat::Bi, false));

  auto [enc, dec] = init_model(ctx.model, config.seed);
  TrainHyper hyper = config.teacher;
  hyper.seed = phase_seed(config.seed, 1);
  TrainResult result;
  result.log = train_teacher(enc, dec, ctx.vocab, train, heldout, hyper);
  result.digest = save_teacher_checkpoint(out_path, enc, dec, ctx.vocab, config.seed, "");
  return result;
}

// ---- distill encoder ---------------------------------------------------------------

TrainResult cmd_distill_encoder(const RunConfig& config, const std::string& data_dir,
                                const std::string& teacher_path, const std::string& out_path) {
  TaskContext ctx = make_context(config);
  DataPaths paths{data_dir};
  TeacherCheckpoint teacher = load_teacher_checkpoint(teacher_path);
  require_matches_context(ctx, teacher.header, "distill-encoder");

  freeze(teacher.encoder);
  // Student starts as a copy of the stage-2 (teacher) encoder.
  EncoderParams student = clone(teacher.encoder);
  set_trainable(student, true);

  const auto train_items =
      pair_items(ctx.vocab, read_required_pairs(paths.pairs(DatasetFormat::UniToPivot, true)));
  const auto heldout_items =
      pair_items(ctx.vocab, read_required_pairs(paths.pairs(DatasetFormat::UniToPivot, false)));

  TrainHyper hyper = config.encoder_distill;
  hyper.seed = phase_seed(config.seed, 2);
  TrainResult result;
  result.log = distill_student_encoder(teacher.encoder, student, train_items, heldout_items, hyper);
  result.digest =
      save_student_encoder_checkpoint(out_path, student, ctx.vocab, config.seed, teacher.digest);
  return result;
}

// ---- finetune decoder ----------------------------------------------------------------

namespace {

// Agreement gate shared by both finetune variants: fraction of held-out
// chained cases where the assembled student reproduces the teacher pipeline.
struct AgreementGate {
  std::vector<ChainedCase> cases;
  std::vector<std::string> teacher_preds;
  const EncoderParams* student_enc = nullptr;
  const Vocab* vocab = nullptr;

  double operator()(const DecoderParams& dec) const {
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      EncodedMatrix ctx = encode(*student_enc, cases[i].x_s);
      const TokenSequence out = decode_greedy(dec, ctx, cases[i].tgt_lang, dec.config.l_max - 2);
      if (vocab->decode_word(out.ids) == teacher_preds[i]) ++hits;
    }
    return cases.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(cases.size());
  }
};

AgreementGate make_agreement_gate(const TaskContext& ctx, const DataPaths& paths,
                                  const TeacherCheckpoint& teacher,
                                  const EncoderParams& student_enc, std::uint64_t seed) {
  AgreementGate gate;
  gate.cases = read_chained_cases(ctx.vocab, paths.chained_test());
  auto gen = seeded_stream(seed, 77);
  shuffle_inplace(gate.cases, gen);
  if (gate.cases.size() > 600) gate.cases.resize(600);

  const int pivot_lang = ctx.vocab.language_id(kPivotName);
  PipelineSpec pipeline =
      mirror_pipeline(teacher.encoder, teacher.decoder, pivot_lang, gate.cases.front().tgt_lang);
  for (const auto& c : gate.cases) {
    std::string pred;
    try {
      pred = ctx.vocab.decode_word(run_pipeline(pipeline, c.x_s, c.tgt_lang).ids);
    } catch (const PipelineError&) {
      pred.clear();
    }
    gate.teacher_preds.push_back(std::move(pred));
  }
  gate.student_enc = &student_enc;
  gate.vocab = &ctx.vocab;
  return gate;
}

}  // namespace

TrainResult cmd_finetune_decoder(const RunConfig& config, const std::string& data_dir,
                                 const std::string& teacher_path,
                                 const std::string& student_encoder_path,
                                 const std::string& out_path, const std::string& variant_override) {
  TaskContext ctx = make_context(config);
  DataPaths paths{data_dir};
  TeacherCheckpoint teacher = load_teacher_checkpoint(teacher_path);
  require_matches_context(ctx, teacher.header, "finetune-decoder");
  EncoderCheckpoint student_enc = load_student_encoder_checkpoint(student_encoder_path);
  require_matches_context(ctx, student_enc.header, "finetune-decoder");

  freeze(teacher.encoder);
  freeze(teacher.decoder);
  freeze(student_enc.encoder);

  const std::string variant = variant_override.empty() ? config.finetune_variant : variant_override;
  if (variant != "reconstruction" && variant != "general")
    throw ConfigError("finetune-decoder: unknown variant '" + variant + "'");

  TrainHyper hyper = config.decoder_finetune;
  hyper.seed = phase_seed(config.seed, 3);

  const auto to_pivot = read_required_pairs(paths.pairs(DatasetFormat::UniToPivot, true));
  AgreementGate gate = make_agreement_gate(ctx, paths, teacher, student_enc.encoder, hyper.seed);

  TrainResult result;
  DecoderParams student_dec;
  if (variant == "reconstruction") {
    student_dec = finetune_decoder_reconstruction(student_enc.encoder, teacher.decoder,
                                                  input_items(ctx.vocab, to_pivot), hyper, gate,
                                                  &result.log);
  } else {
    student_dec = finetune_decoder_general(teacher.decoder, teacher.encoder, student_enc.encoder,
                                           ctx.vocab, pair_items(ctx.vocab, to_pivot), hyper, gate,
                                           &result.log);
  }
  result.digest = save_student_full_checkpoint(out_path, student_enc.encoder, student_dec,
                                               ctx.vocab, config.seed, student_enc.digest);
  return result;
}

// ---- eval -------------------------------------------------------------------------

EvalResult cmd_eval(const RunConfig& config, const std::string& data_dir,
                    const std::string& teacher_path, const std::string& student_path,
                    const std::string& report_path, const std::string& dump_dir) {
  TaskContext ctx = make_context(config);
  DataPaths paths{data_dir};
  TeacherCheckpoint teacher = load_teacher_checkpoint(teacher_path);
  require_matches_context(ctx, teacher.header, "eval");
  StudentCheckpoint student_ckpt = load_student_full_checkpoint(student_path);
  require_matches_context(ctx, student_ckpt.header, "eval");

  const int pivot_lang = ctx.vocab.language_id(kPivotName);
  StudentModel student = assemble_student(std::move(student_ckpt.encoder),
                                          std::move(student_ckpt.decoder));
  PipelineSpec pipeline =
      mirror_pipeline(teacher.encoder, teacher.decoder, pivot_lang, pivot_lang == 3 ? 4 : 3);

  auto cases = read_chained_cases(ctx.vocab, paths.chained_test());

  // Group by ordered language pair, preserving file order inside a pair.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_pair;
  for (std::size_t i = 0; i < cases.size(); ++i)
    by_pair[{cases[i].src, cases[i].tgt}].push_back(i);

  EvalReport report;
  if (!dump_dir.empty()) fs::create_directories(dump_dir);

  std::vector<ChainedExample> all_examples;
  std::vector<std::string> all_teacher_preds, all_student_preds;
  std::vector<std::size_t> all_case_idx;

  for (const auto& [pair_key, idx] : by_pair) {
    const auto& [src, tgt] = pair_key;
    const auto allowed = read_allowed(paths.allowed(src, tgt));

    std::vector<ChainedExample> examples;
    std::vector<std::string> teacher_preds, student_preds;
    for (std::size_t i : idx) {
      const ChainedCase& c = cases[i];
      auto it = allowed.find(c.word);
      if (it == allowed.end())
        throw InputError("eval: word '" + c.word + "' missing from allowed-variant file for " +
                         src + "-" + tgt);
      ChainedExample ex;
      ex.source = c.word;
      ex.target = c.canonical;
      ex.allowed_targets = it->second;
      examples.push_back(std::move(ex));

      std::string t_pred;
      try {
        t_pred = ctx.vocab.decode_word(run_pipeline(pipeline, c.x_s, c.tgt_lang).ids);
      } catch (const PipelineError&) {
        t_pred.clear();
      }
      teacher_preds.push_back(t_pred);
      student_preds.push_back(ctx.vocab.decode_word(student.predict(c.x_s, c.tgt_lang).ids));
    }

    PairEval pe;
    pe.src = src;
    pe.tgt = tgt;
    pe.count = static_cast<int>(examples.size());
    pe.teacher_phonetic = phonetic_accuracy(teacher_preds, examples);
    pe.student_phonetic = phonetic_accuracy(student_preds, examples);
    double cer_t = 0.0, cer_s = 0.0;
    std::int64_t agree = 0;
    std::string dump;
    for (std::size_t k = 0; k < examples.size(); ++k) {
      const double ct = cer(examples[k].target, teacher_preds[k]);
      const double cs = cer(examples[k].target, student_preds[k]);
      cer_t += ct;
      cer_s += cs;
      if (teacher_preds[k] == student_preds[k]) ++agree;
      if (!dump_dir.empty()) {
        const bool t_ok = examples[k].allowed_targets.count(teacher_preds[k]) > 0;
        const bool s_ok = examples[k].allowed_targets.count(student_preds[k]) > 0;
        dump += examples[k].source + "\t" + teacher_preds[k] + "\t" + student_preds[k] + "\t" +
                (t_ok ? "1" : "0") + "\t" + (s_ok ? "1" : "0") + "\t" + std::to_string(ct) + "\t" +
                std::to_string(cs) + "\n";
      }
    }
    pe.teacher_cer = cer_t / static_cast<double>(examples.size());
    pe.student_cer = cer_s / static_cast<double>(examples.size());
    pe.agreement = static_cast<double>(agree) / static_cast<double>(examples.size());
    report.pairs.push_back(pe);
    if (!dump_dir.empty())
      write_file_atomic(dump_dir + "/predictions_" + src + "_" + tgt + ".tsv", dump);

    for (std::size_t k = 0; k < examples.size(); ++k) {
      all_case_idx.push_back(idx[k]);
      all_examples.push_back(examples[k]);
      all_teacher_preds.push_back(teacher_preds[k]);
      all_student_preds.push_back(student_preds[k]);
    }
  }

  // Emergent-win partition over the whole held-out set; student-only cases
  // are emitted verbatim for inspection.
  WinPartition partition = emergent_partition(all_teacher_preds, all_student_preds, all_examples);
  report.wins.both_correct = static_cast<std::int64_t>(partition.both_correct.size());
  report.wins.teacher_only = static_cast<std::int64_t>(partition.teacher_only.size());
  report.wins.student_only = static_cast<std::int64_t>(partition.student_only.size());
  report.wins.both_wrong = static_cast<std::int64_t>(partition.both_wrong.size());
  for (std::size_t i : partition.student_only) {
    const ChainedCase& c = cases[all_case_idx[i]];
    report.wins.student_only_examples.push_back(
        {c.src, c.tgt, c.word, all_teacher_preds[i], all_student_preds[i]});
  }

  // Encoder similarity per source language over both splits.
  SimilarityInputs sim;
  for (bool train : {true, false}) {
    const auto records = read_required_pairs(paths.pairs(DatasetFormat::UniToPivot, train));
    auto& side = train ? sim.train : sim.test;
    for (const auto& r : records)
      side[r.src_lang].push_back({to_sequence(ctx.vocab, r.src_word, r.src_lang),
                                  to_sequence(ctx.vocab, r.tgt_word, r.tgt_lang)});
  }
  report.similarity = encoder_similarity_report(teacher.encoder, student.encoder, ctx.vocab, sim);
  if (!dump_dir.empty()) {
    std::string dump;
    for (const auto& rec : report.similarity.records)
      dump += rec.source_lang + "\t" + rec.split + "\t" + rec.word + "\t" +
              std::to_string(rec.cosine) + "\n";
    write_file_atomic(dump_dir + "/similarity.tsv", dump);
  }

  report.passes = verify_pass_counts(pipeline, student, cases.front().x_s, cases.front().tgt_lang);

  Provenance prov{teacher.digest, student_ckpt.digest, config.seed, iso_timestamp()};
  EvalResult result{std::move(report), ""};
  result.json = metrics_report_json(result.report, prov);
  if (!report_path.empty()) write_file_atomic(report_path, result.json);
  return result;
}

// ---- bench ------------------------------------------------------------------------

BenchResult cmd_bench(const RunConfig& config, const std::string& data_dir,
                      const std::string& teacher_path, const std::string& student_path,
                      const std::string& out_path, int n_words, int repetitions) {
  TaskContext ctx = make_context(config);
  DataPaths paths{data_dir};
  TeacherCheckpoint teacher = load_teacher_checkpoint(teacher_path);
  require_matches_context(ctx, teacher.header, "bench");
  StudentCheckpoint student_ckpt = load_student_full_checkpoint(student_path);
  require_matches_context(ctx, student_ckpt.header, "bench");

  const int pivot_lang = ctx.vocab.language_id(kPivotName);
  StudentModel student = assemble_student(std::move(student_ckpt.encoder),
                                          std::move(student_ckpt.decoder));
  PipelineSpec pipeline =
      mirror_pipeline(teacher.encoder, teacher.decoder, pivot_lang, pivot_lang == 3 ? 4 : 3);

  auto cases = read_chained_cases(ctx.vocab, paths.chained_test());
  if (static_cast<int>(cases.size()) < n_words)
    throw InputError("bench: only " + std::to_string(cases.size()) + " held-out words available, " +
                     std::to_string(n_words) + " requested");
  auto gen = seeded_stream(config.seed, 99);
  shuffle_inplace(cases, gen);
  cases.resize(static_cast<std::size_t>(n_words));

  LatencyInputs inputs;
  for (const auto& c : cases) inputs.by_length[word_length(c.x_s)].push_back({c.x_s, c.tgt_lang});

  BenchResult result;
  result.latency = latency_bench(pipeline, student, inputs, repetitions);
  result.passes = verify_pass_counts(pipeline, student, cases.front().x_s, cases.front().tgt_lang);

  EvalReport report;
  report.latency = result.latency;
  report.passes = result.passes;
  Provenance prov{teacher.digest, student_ckpt.digest, config.seed, iso_timestamp()};
  result.json = metrics_report_json(report, prov);
  if (!out_path.empty()) write_file_atomic(out_path, result.json);
  return result;
}

}  // namespace pipefold::workflow
