#pragma once

#include <string>
#include <vector>

#include "pipefold/checkpoint.hpp"
#include "pipefold/metrics.hpp"
#include "pipefold/runconfig.hpp"

namespace pipefold::workflow {

// File layout inside a data directory produced by generate_data.
struct DataPaths {
  std::string dir;

  std::string pairs(DatasetFormat format, bool train) const;
  std::string chained_test() const;
  std::string allowed(const std::string& src, const std::string& tgt) const;
};

// Resolved task context: the corpus is a pure function of the config, and
// the model config is completed with the derived vocabulary sizes.
struct TaskContext {
  Corpus corpus;
  Vocab vocab;
  ModelConfig model;
};

TaskContext make_context(const RunConfig& config);

std::uint64_t phase_seed(std::uint64_t base, int phase);

// One held-out chained-transduction case.
struct ChainedCase {
  std::string src;
  std::string tgt;
  std::string word;
  std::string canonical;
  TokenSequence x_s;
  int tgt_lang = -1;
};

std::vector<ChainedCase> read_chained_cases(const Vocab& vocab, const std::string& path);

// ---- commands (the CLI calls straight into these) ----------------------------

void generate_data(const RunConfig& config, const std::string& out_dir);

struct TrainResult {
  std::string digest;
  TrainLog log;
};

TrainResult cmd_train_teacher(const RunConfig& config, const std::string& data_dir,
                              const std::string& out_path);

TrainResult cmd_distill_encoder(const RunConfig& config, const std::string& data_dir,
                                const std::string& teacher_path, const std::string& out_path);

// variant_override: empty string keeps the config's finetune_variant.
TrainResult cmd_finetune_decoder(const RunConfig& config, const std::string& data_dir,
                                 const std::string& teacher_path,
                                 const std::string& student_encoder_path,
                                 const std::string& out_path,
                                 const std::string& variant_override = "");

struct EvalResult {
  EvalReport report;
  std::string json;
};

// report_path / dump_dir may be empty to skip writing.
EvalResult cmd_eval(const RunConfig& config, const std::string& data_dir,
                    const std::string& teacher_path, const std::string& student_path,
                    const std::string& report_path, const std::string& dump_dir);

struct BenchResult {
  LatencyReport latency;
  PassCheck passes;
  std::string json;
};

BenchResult cmd_bench(const RunConfig& config, const std::string& data_dir,
                      const std::string& teacher_path, const std::string& student_path,
                      const std::string& out_path, int n_words, int repetitions);

}  // namespace pipefold::workflow
